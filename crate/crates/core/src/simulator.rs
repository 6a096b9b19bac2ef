//! Stochastic simulation of a low-resolution time series from a
//! high-resolution fluorophore density map.
//!
//! Per frame: every fluorophore takes one Markov step, emitting ones are
//! rendered with a freshly drawn PSF width and peak intensity, a DC offset
//! proportional to the frame mean is added, the frame is binned down and
//! Gaussian read noise is applied.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::imaging::{add_gaussian_noise, downsample, FrameStack, Image};
use crate::photophysics::{
    render_psf, sample_categorical, sample_photon_intensity, sample_psf_width, step_state, CalibrationProfile,
    FluorophoreState,
};

/// Exposure attached to simulated stacks.
pub const DEFAULT_EXPOSURE_MS: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Fluorophore {
    pub id: usize,
    /// High-resolution pixel coordinates.
    pub x: f64,
    pub y: f64,
    pub state: FluorophoreState,
    /// Width of the most recent emission.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub frames: usize,
    /// High-resolution pixels per low-resolution pixel along each axis.
    pub scale: usize,
    /// Expected fluorophores per unit of density.
    pub count_scale: f64,
    pub rng_seed: u64,
    pub exposure_ms: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            frames: 200,
            scale: 8,
            count_scale: 1.0,
            rng_seed: 0,
            exposure_ms: DEFAULT_EXPOSURE_MS,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::invalid("frames", "must be >= 1"));
        }
        if self.scale == 0 {
            return Err(Error::invalid("scale", "must be >= 1"));
        }
        if !(self.count_scale > 0.0 && self.count_scale.is_finite()) {
            return Err(Error::invalid("count_scale", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Places Poisson(`count_scale` · density) fluorophores in every pixel, each
/// uniformly within its source pixel, with initial states drawn from the
/// profile. A black density map yields an empty population.
pub fn populate_fluorophores<R: Rng + ?Sized>(
    density: &Image,
    count_scale: f64,
    profile: &CalibrationProfile,
    rng: &mut R,
) -> Result<Vec<Fluorophore>> {
    if !(count_scale > 0.0 && count_scale.is_finite()) {
        return Err(Error::invalid("count_scale", "must be finite and > 0"));
    }
    let initial_sigma = profile.psf.mean_sigma();
    let mut population = Vec::new();
    for y in 0..density.height() {
        for x in 0..density.width() {
            let lambda = count_scale * density.get(x, y);
            if lambda <= 0.0 {
                continue;
            }
            let poisson = Poisson::new(lambda).map_err(|_| Error::invalid("density", "Poisson rate rejected"))?;
            let n = poisson.sample(rng) as usize;
            for _ in 0..n {
                let state = FluorophoreState::from_index(sample_categorical(&profile.initial_state_probs, rng));
                population.push(Fluorophore {
                    id: population.len(),
                    x: x as f64 + rng.random::<f64>(),
                    y: y as f64 + rng.random::<f64>(),
                    state,
                    sigma: initial_sigma,
                });
            }
        }
    }
    Ok(population)
}

/// Advances every fluorophore one step and renders the emitting ones onto a
/// fresh high-resolution canvas.
pub fn simulate_frame<R: Rng + ?Sized>(
    population: &mut [Fluorophore],
    profile: &CalibrationProfile,
    width: usize,
    height: usize,
    rng: &mut R,
) -> Image {
    let mut canvas = Image::zeros(width, height);
    for f in population.iter_mut() {
        f.state = step_state(f.state, &profile.transfer, rng);
        if f.state == FluorophoreState::Emitting {
            let i0 = sample_photon_intensity(&profile.photon, rng);
            f.sigma = sample_psf_width(&profile.psf, rng);
            render_psf(&mut canvas, f.x, f.y, i0, f.sigma).expect("sampled PSF parameters are valid");
        }
    }
    canvas
}

/// Adds a uniform offset of `strength_factor` × the image mean.
pub fn add_background(image: &Image, strength_factor: f64) -> Result<Image> {
    if !(strength_factor >= 0.0 && strength_factor.is_finite()) {
        return Err(Error::invalid("background strength factor", "must be finite and >= 0"));
    }
    let offset = strength_factor * image.mean();
    Ok(image.map(|v| v + offset))
}

/// One simulated time point.
#[derive(Debug, Clone)]
pub struct SimulatedFrame {
    /// Binned, noisy observation.
    pub observed: Image,
    /// Noise- and background-free high-resolution render.
    pub ground_truth: Image,
}

/// Frame-by-frame simulation driven by a single seeded RNG stream.
pub struct Simulation<'a> {
    profile: &'a CalibrationProfile,
    config: SimulationConfig,
    population: Vec<Fluorophore>,
    background_factor: f64,
    rng: ChaCha8Rng,
    width: usize,
    height: usize,
    pixel_size_nm: f64,
    frame: usize,
}

impl<'a> Simulation<'a> {
    pub fn new(density: &Image, profile: &'a CalibrationProfile, config: SimulationConfig) -> Result<Self> {
        config.validate()?;
        profile.validate()?;
        let (w, h) = density.dims();
        if w % config.scale != 0 || h % config.scale != 0 {
            return Err(Error::NotDivisible {
                width: w,
                height: h,
                factor: config.scale,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let population = populate_fluorophores(density, config.count_scale, profile, &mut rng)?;
        let [lo, hi] = profile.background_factor_range;
        let background_factor = if hi > lo { rng.random_range(lo..hi) } else { lo };
        Ok(Simulation {
            profile,
            config,
            population,
            background_factor,
            rng,
            width: w,
            height: h,
            pixel_size_nm: density.pixel_size_nm(),
            frame: 0,
        })
    }

    pub fn population(&self) -> &[Fluorophore] {
        &self.population
    }

    /// Strength factor drawn once for the whole series.
    pub fn background_factor(&self) -> f64 {
        self.background_factor
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn frames_remaining(&self) -> usize {
        self.config.frames - self.frame
    }

    /// Produces the next frame, or `None` once the configured count is reached.
    pub fn next_frame(&mut self) -> Option<SimulatedFrame> {
        if self.frame >= self.config.frames {
            return None;
        }
        self.frame += 1;
        let ground_truth = simulate_frame(&mut self.population, self.profile, self.width, self.height, &mut self.rng)
            .with_pixel_size(self.pixel_size_nm);
        let with_bg = add_background(&ground_truth, self.background_factor).expect("factor validated");
        let binned = downsample(&with_bg, self.config.scale).expect("scale validated");
        let observed =
            add_gaussian_noise(&binned, self.profile.noise_sigma, &mut self.rng).expect("noise sigma validated");
        Some(SimulatedFrame { observed, ground_truth })
    }
}

/// Output of [`simulate_stack`].
#[derive(Debug, Clone)]
pub struct SimulatedStack {
    pub stack: FrameStack,
    /// High-resolution renders, kept only when requested.
    pub ground_truth: Vec<Image>,
    pub background_factor: f64,
    pub fluorophore_count: usize,
}

/// Runs the full pipeline. Output is a pure function of the inputs and the seed.
pub fn simulate_stack(
    density: &Image,
    profile: &CalibrationProfile,
    config: &SimulationConfig,
    keep_ground_truth: bool,
) -> Result<SimulatedStack> {
    let mut sim = Simulation::new(density, profile, config.clone())?;
    let fluorophore_count = sim.population().len();
    let background_factor = sim.background_factor();
    let mut frames = Vec::with_capacity(config.frames);
    let mut ground_truth = Vec::new();
    while let Some(f) = sim.next_frame() {
        frames.push(f.observed);
        if keep_ground_truth {
            ground_truth.push(f.ground_truth);
        }
    }
    Ok(SimulatedStack {
        stack: FrameStack::new(frames, config.exposure_ms)?,
        ground_truth,
        background_factor,
        fluorophore_count,
    })
}

//! The EM loop tying initialization, E-step, M-step, acceptance and neighbor
//! expansion together.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{FrameStack, Image};
use crate::photophysics::render_psf;

use super::{
    accept_test, e_step_ffbs, expand_neighbors, initialize_from_prior, m_step_map, FluorophoreHypothesis,
    InferenceConfig, Observation, ResidualContext,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    /// Accepted fluorophores rendered at their MAP parameters on the
    /// high-resolution canvas, divided by `peak`.
    pub sr_image: Image,
    /// Maximum of the unnormalized render (0 when nothing was accepted).
    pub peak: f64,
    pub fluorophores: Vec<FluorophoreHypothesis>,
    /// Log-posterior of the model before the first sweep, then after each sweep.
    pub log_posterior_trace: Vec<f64>,
    /// Accepted count after each sweep.
    pub accepted_trace: Vec<usize>,
    pub iterations_run: usize,
    pub noise_sigma: f64,
}

impl ReconstructionResult {
    /// The render before normalization.
    pub fn unnormalized(&self) -> Image {
        let peak = self.peak;
        self.sr_image.map(|v| v * peak)
    }
}

/// Reconstructs with the per-frame background estimated from the stack.
pub fn reconstruct(stack: &FrameStack, prior: &Image, config: &InferenceConfig) -> Result<ReconstructionResult> {
    reconstruct_with_observation(&Observation::new(stack, config.scale), prior, config)
}

/// Log-likelihood of the data plus the prior odds of every accepted site.
fn log_posterior(residual: &ResidualContext, accepted: usize, config: &InferenceConfig) -> f64 {
    residual.log_likelihood(config.noise_sigma) + accepted as f64 * config.priors.log_odds()
}

/// One E-step, M-step and acceptance test for `h` against everything else.
fn refine<R: Rng + ?Sized>(h: &mut FluorophoreHypothesis, residual: &mut ResidualContext, config: &InferenceConfig, rng: &mut R) {
    if h.accepted {
        residual.exclude(h);
    }
    h.states = e_step_ffbs(h, residual, config, rng);
    h.accepted = match m_step_map(h, residual, config) {
        Some(p) => {
            h.set_params(p);
            accept_test(h, residual, &config.priors, config.noise_sigma).accepted
        }
        None => false,
    };
    if h.accepted {
        residual.include(h);
    }
}

pub fn reconstruct_with_observation(
    obs: &Observation<'_>,
    prior: &Image,
    config: &InferenceConfig,
) -> Result<ReconstructionResult> {
    config.validate()?;
    if obs.scale() != config.scale {
        return Err(Error::invalid("scale", "observation and config disagree"));
    }
    let stack = obs.stack();
    let expected = (stack.width() * config.scale, stack.height() * config.scale);
    if prior.dims() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: prior.dims(),
        });
    }
    let (canvas_w, canvas_h) = (expected.0 as f64, expected.1 as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut residual = ResidualContext::new(obs);
    let mut pool = initialize_from_prior(prior, config, &mut rng);

    let baseline = log_posterior(&residual, 0, config);
    let mut trace = alloc::vec![baseline];
    let mut accepted_trace = Vec::new();
    let mut plateau = 0;
    let mut iterations_run = 0;
    let mut order: Vec<usize> = Vec::new();

    while iterations_run < config.iterations && !pool.is_empty() {
        order.clear();
        order.extend(0..pool.len());
        order.shuffle(&mut rng);
        for &i in &order {
            refine(&mut pool[i], &mut residual, config, &mut rng);
        }
        pool.retain(|h| h.accepted);

        let mut proposals = expand_neighbors(&pool, &pool, canvas_w, canvas_h, config, &mut rng);
        for h in proposals.iter_mut() {
            refine(h, &mut residual, config, &mut rng);
        }
        pool.extend(proposals.into_iter().filter(|h| h.accepted));

        iterations_run += 1;
        let lp = log_posterior(&residual, pool.len(), config);
        let previous = *trace.last().unwrap_or(&baseline);
        trace.push(lp);
        accepted_trace.push(pool.len());

        // Plateau: the sweep's gain is small next to everything gained so far.
        let relative = (lp - previous) / libm::fabs(lp - baseline).max(1.0);
        plateau = if relative < config.convergence_tol { plateau + 1 } else { 0 };
        if plateau >= config.plateau_iterations {
            break;
        }
    }

    let pixel_size = stack.pixel_size_nm() / config.scale as f64;
    let mut canvas = Image::zeros(expected.0, expected.1).with_pixel_size(pixel_size);
    for h in &pool {
        render_psf(&mut canvas, h.x, h.y, h.i0, h.sigma)?;
    }
    let peak = canvas.max();
    let sr_image = if peak > 0.0 { canvas.map(|v| v / peak) } else { canvas };

    Ok(ReconstructionResult {
        sr_image,
        peak,
        fluorophores: pool,
        log_posterior_trace: trace,
        accepted_trace,
        iterations_run,
        noise_sigma: config.noise_sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::model::Footprint;
    use crate::inference::PsfParams;
    use crate::photophysics::{CalibrationProfile, FluorophoreState, PhotonModel, PsfModel};
    use alloc::vec;

    fn profile() -> CalibrationProfile {
        let mut p = CalibrationProfile::meos32();
        p.photon = PhotonModel::new(libm::log(0.6), 0.0).unwrap();
        p.psf = PsfModel::fixed(12.0).unwrap();
        p
    }

    fn spot_stack(truth: &PsfParams, size: usize, frames: usize) -> FrameStack {
        let mut px = vec![0.0; size * size];
        Footprint::new(truth, 8, size, size).add_to(&mut px, size, truth.i0);
        let img = Image::new(size, size, 160.0, px).unwrap();
        FrameStack::new(vec![img; frames], 50.0).unwrap()
    }

    #[test]
    fn zero_stack_and_prior_give_empty_result() {
        let stack = FrameStack::new(vec![Image::zeros(6, 6); 4], 50.0).unwrap();
        let cfg = InferenceConfig::from_profile(&profile(), 8, 0.01);
        let out = reconstruct(&stack, &Image::zeros(48, 48), &cfg).unwrap();
        assert!(out.fluorophores.is_empty());
        assert_eq!(out.sr_image.dims(), (48, 48));
        assert!(out.sr_image.pixels().iter().all(|&v| v == 0.0));
        assert_eq!(out.peak, 0.0);
    }

    #[test]
    fn prior_dimension_mismatch() {
        let stack = FrameStack::new(vec![Image::zeros(6, 6); 2], 50.0).unwrap();
        let cfg = InferenceConfig::from_profile(&profile(), 8, 0.01);
        let err = reconstruct(&stack, &Image::zeros(40, 48), &cfg).unwrap_err();
        assert!(err.is_dimension_error());
    }

    #[test]
    fn single_spot_with_exact_prior() {
        let truth = PsfParams { x: 36.4, y: 35.6, i0: 0.6, sigma: 12.0 / crate::photophysics::FWHM_PER_SIGMA };
        let stack = spot_stack(&truth, 9, 10);
        let obs = Observation::with_background(&stack, 8, vec![0.0; 10]).unwrap();
        let mut prior = Image::zeros(72, 72);
        render_psf(&mut prior, truth.x, truth.y, truth.i0, truth.sigma).unwrap();
        let mut cfg = InferenceConfig::from_profile(&profile(), 8, 0.01);
        cfg.iterations = 10;
        cfg.candidates_per_reference_field = 20_000;
        let out = reconstruct_with_observation(&obs, &prior.normalized(), &cfg).unwrap();
        assert!(!out.fluorophores.is_empty());
        let best = out
            .fluorophores
            .iter()
            .map(|h| ((h.x - truth.x).powi(2) + (h.y - truth.y).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(best < 1.0, "closest accepted at {best}");
        for h in &out.fluorophores {
            assert!(h.respects_bleaching());
            assert_eq!(h.states.len(), 10);
        }
        assert!(out.log_posterior_trace.last().unwrap() >= &out.log_posterior_trace[0]);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let truth = PsfParams { x: 30.0, y: 41.0, i0: 0.6, sigma: 4.0 };
        let stack = spot_stack(&truth, 9, 6);
        let mut prior = Image::zeros(72, 72);
        render_psf(&mut prior, 31.0, 40.0, 1.0, 4.0).unwrap();
        let mut cfg = InferenceConfig::from_profile(&profile(), 8, 0.01);
        cfg.iterations = 4;
        cfg.rng_seed = 99;
        let a = reconstruct(&stack, &prior, &cfg).unwrap();
        let b = reconstruct(&stack, &prior, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn separated_fluorophores_factorize() {
        // Two spots far enough apart that neither footprint reaches the other's window.
        let a = PsfParams { x: 30.0, y: 30.0, i0: 0.6, sigma: 3.0 };
        let b = PsfParams { x: 170.0, y: 150.0, i0: 0.5, sigma: 3.5 };
        let (w, h, t) = (24, 24, 5);
        let states_a = vec![
            FluorophoreState::Emitting,
            FluorophoreState::Emitting,
            FluorophoreState::Dark,
            FluorophoreState::Emitting,
            FluorophoreState::Bleached,
        ];
        let states_b = vec![
            FluorophoreState::Dark,
            FluorophoreState::Emitting,
            FluorophoreState::Emitting,
            FluorophoreState::Emitting,
            FluorophoreState::Emitting,
        ];
        let frames: Vec<Image> = (0..t)
            .map(|k| {
                let mut px = vec![0.0; w * h];
                if states_a[k] == FluorophoreState::Emitting {
                    Footprint::new(&a, 8, w, h).add_to(&mut px, w, a.i0);
                }
                if states_b[k] == FluorophoreState::Emitting {
                    Footprint::new(&b, 8, w, h).add_to(&mut px, w, b.i0);
                }
                Image::new(w, h, 160.0, px).unwrap()
            })
            .collect();
        let stack = FrameStack::new(frames, 50.0).unwrap();
        let obs = Observation::with_background(&stack, 8, vec![0.0; t]).unwrap();
        let mut cfg = InferenceConfig::from_profile(&CalibrationProfile::meos32(), 8, 0.01);
        cfg.sigma_bounds = (1.5, 6.0);
        cfg.cg.max_iterations = 300;

        let start_a = FluorophoreHypothesis::new(PsfParams { x: 31.5, y: 29.0, i0: 0.4, sigma: 2.8 }, states_a);
        let start_b = FluorophoreHypothesis::new(PsfParams { x: 168.0, y: 151.0, i0: 0.7, sigma: 3.2 }, states_b);

        let mut joint = ResidualContext::new(&obs);
        joint.include(&start_b);
        let joint_a = m_step_map(&start_a, &joint, &cfg).unwrap();
        joint.exclude(&start_b);
        joint.include(&start_a);
        let joint_b = m_step_map(&start_b, &joint, &cfg).unwrap();

        let alone = ResidualContext::new(&obs);
        let single_a = m_step_map(&start_a, &alone, &cfg).unwrap();
        let single_b = m_step_map(&start_b, &alone, &cfg).unwrap();
        for (j, s) in [(joint_a, single_a), (joint_b, single_b)] {
            assert!((j.x - s.x).abs() < 1e-6 && (j.y - s.y).abs() < 1e-6);
            assert!((j.i0 - s.i0).abs() < 1e-6 && (j.sigma - s.sigma).abs() < 1e-6);
        }
    }
}

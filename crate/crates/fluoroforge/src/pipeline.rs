//! Whole-field reconstruction: default prior, optional tiling and parallel
//! tile reconstruction with deterministic per-tile seeds.

use fluoroforge_core::imaging::{temporal_mean, upsample_bicubic, FrameStack, Image};
use fluoroforge_core::inference::{derive_seed, estimate_noise_sigma, reconstruct, InferenceConfig, PsfParams};
use fluoroforge_core::photophysics::CalibrationProfile;
use fluoroforge_core::tiling::{split_tiles, stitch, TileSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "FLUOROFORGE_THREADS";

/// Bicubic upsampling of the temporal mean, scaled so its maximum is 1.
pub fn default_prior(stack: &FrameStack, scale: usize) -> Result<Image> {
    Ok(upsample_bicubic(&temporal_mean(stack), scale)?.normalized())
}

/// Worker count used when none is requested: the available parallelism,
/// capped by `FLUOROFORGE_THREADS` when that is set to a positive integer.
pub fn default_jobs() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(cap) if cap > 0 => available.min(cap),
        _ => available,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tiling {
    pub width: usize,
    pub height: usize,
    pub overlap: usize,
}

#[derive(Debug, Clone)]
pub struct ReconstructOptions {
    pub profile: CalibrationProfile,
    pub scale: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Gaussian read-noise level; estimated from the stack when absent.
    pub noise_sigma: Option<f64>,
    pub tiling: Option<Tiling>,
    pub jobs: usize,
}

impl ReconstructOptions {
    pub fn new(profile: CalibrationProfile, scale: usize) -> Self {
        ReconstructOptions {
            profile,
            scale,
            iterations: 60,
            seed: 0,
            noise_sigma: None,
            tiling: None,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TileTrace {
    pub tile: TileSpec,
    pub seed: u64,
    pub iterations_run: usize,
    pub log_posterior: Vec<f64>,
    pub accepted: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceReport {
    pub noise_sigma: f64,
    pub tiles: Vec<TileTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldResult {
    /// Normalized so its maximum is 1 (all zeros when nothing was accepted).
    pub sr_image: Image,
    /// Accepted fluorophores in whole-field high-resolution coordinates.
    pub fluorophores: Vec<PsfParams>,
    pub trace: TraceReport,
}

struct TileOutput {
    render: Image,
    fluorophores: Vec<PsfParams>,
    trace: TileTrace,
}

fn reconstruct_tile(
    tile: TileSpec,
    index: usize,
    stack: &FrameStack,
    prior: &Image,
    options: &ReconstructOptions,
    noise_sigma: f64,
) -> Result<TileOutput> {
    let s = options.scale;
    let tile_stack = stack.crop(tile.x, tile.y, tile.w, tile.h)?;
    let tile_prior = prior.crop(tile.x * s, tile.y * s, tile.w * s, tile.h * s)?;
    let mut config = InferenceConfig::from_profile(&options.profile, s, noise_sigma);
    config.iterations = options.iterations;
    config.rng_seed = if options.tiling.is_some() {
        derive_seed(options.seed, index as u64)
    } else {
        options.seed
    };
    let out = reconstruct(&tile_stack, &tile_prior, &config)?;
    let (ox, oy) = ((tile.x * s) as f64, (tile.y * s) as f64);
    let fluorophores = out
        .fluorophores
        .iter()
        .map(|h| PsfParams {
            x: h.x + ox,
            y: h.y + oy,
            ..h.params()
        })
        .collect();
    Ok(TileOutput {
        render: out.unnormalized(),
        fluorophores,
        trace: TileTrace {
            tile,
            seed: config.rng_seed,
            iterations_run: out.iterations_run,
            log_posterior: out.log_posterior_trace,
            accepted: out.accepted_trace,
        },
    })
}

/// Reconstructs the whole field. Tiles are processed on `jobs` workers;
/// every tile has its own seed, so the output does not depend on `jobs`.
pub fn reconstruct_field(stack: &FrameStack, prior: &Image, options: &ReconstructOptions) -> Result<FieldResult> {
    let s = options.scale;
    let expected = (stack.width() * s, stack.height() * s);
    if prior.dims() != expected {
        return Err(fluoroforge_core::Error::DimensionMismatch {
            expected,
            actual: prior.dims(),
        }
        .into());
    }
    if options.jobs == 0 {
        return Err(Error::Usage("jobs must be at least 1".into()));
    }
    let noise_sigma = options.noise_sigma.unwrap_or_else(|| estimate_noise_sigma(stack));
    let (w, h) = stack.dims();
    let tiles = match &options.tiling {
        Some(t) => split_tiles(w, h, t.width, t.height, t.overlap)?,
        None => vec![TileSpec { x: 0, y: 0, w, h, overlap: 0 }],
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {} workers: {e}", options.jobs)))?;
    let outputs: Vec<TileOutput> = pool.install(|| {
        tiles
            .par_iter()
            .enumerate()
            .map(|(i, &tile)| reconstruct_tile(tile, i, stack, prior, options, noise_sigma))
            .collect::<Result<Vec<_>>>()
    })?;

    let renders: Vec<Image> = outputs.iter().map(|o| o.render.clone()).collect();
    let stitched = stitch(&tiles, &renders, w, h, s)?;
    let mut fluorophores = Vec::new();
    let mut traces = Vec::with_capacity(outputs.len());
    for (tile, out) in tiles.iter().zip(outputs) {
        fluorophores.extend(out.fluorophores.into_iter().filter(|p| tile.owns(p.x, p.y, w, h, s)));
        traces.push(out.trace);
    }
    Ok(FieldResult {
        sr_image: stitched.normalized(),
        fluorophores,
        trace: TraceReport {
            noise_sigma,
            tiles: traces,
        },
    })
}

//! Candidate generation: re-sampling the prior image and proposing neighbors
//! around accepted fluorophores.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::Rng;

use crate::imaging::Image;

use super::{FluorophoreHypothesis, InferenceConfig, PsfParams};

/// Proposals closer than this to an existing hypothesis are dropped.
pub const DEDUP_RADIUS: f64 = 0.5;

/// Reference high-resolution field (480×480) the candidate cap is quoted for.
const REFERENCE_AREA: f64 = 480.0 * 480.0;

/// Candidate cap for a high-resolution canvas of the given size.
pub fn candidate_cap(config: &InferenceConfig, width: usize, height: usize) -> usize {
    let area = (width * height) as f64;
    libm::ceil(config.candidates_per_reference_field as f64 * area / REFERENCE_AREA) as usize
}

fn jitter<R: Rng + ?Sized>(limit: f64, rng: &mut R) -> f64 {
    if limit > 0.0 {
        rng.random_range(-limit..=limit)
    } else {
        0.0
    }
}

/// One candidate per prior pixel above `candidate_threshold · max`, brightest
/// first and capped by area. Intensity is `√I`, position the pixel center
/// plus uniform jitter in `±jitter_limit`, clipped to the canvas. State paths
/// start empty, so candidates contribute nothing until their first E-step.
pub fn initialize_from_prior<R: Rng + ?Sized>(
    prior: &Image,
    config: &InferenceConfig,
    rng: &mut R,
) -> Vec<FluorophoreHypothesis> {
    let peak = prior.max();
    if !(peak > 0.0) {
        return Vec::new();
    }
    let cutoff = config.candidate_threshold * peak;
    let mut sites: Vec<(usize, f64)> = prior
        .pixels()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0 && v >= cutoff)
        .map(|(i, &v)| (i, v))
        .collect();
    sites.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sites.truncate(candidate_cap(config, prior.width(), prior.height()));

    let (w, h) = (prior.width() as f64, prior.height() as f64);
    sites
        .into_iter()
        .map(|(i, v)| {
            let cx = (i % prior.width()) as f64 + 0.5;
            let cy = (i / prior.width()) as f64 + 0.5;
            let x = (cx + jitter(config.jitter_limit, rng)).clamp(0.0, w);
            let y = (cy + jitter(config.jitter_limit, rng)).clamp(0.0, h);
            FluorophoreHypothesis::new(
                PsfParams {
                    x,
                    y,
                    i0: libm::sqrt(v),
                    sigma: config.initial_sigma,
                },
                Vec::new(),
            )
        })
        .collect()
}

/// Occupancy grid of 1-px cells for duplicate suppression.
struct SiteGrid {
    cells: BTreeMap<(i64, i64), Vec<(f64, f64)>>,
}

impl SiteGrid {
    fn key(x: f64, y: f64) -> (i64, i64) {
        (libm::floor(x) as i64, libm::floor(y) as i64)
    }

    fn insert(&mut self, x: f64, y: f64) {
        self.cells.entry(Self::key(x, y)).or_default().push((x, y));
    }

    fn is_near(&self, x: f64, y: f64) -> bool {
        let (kx, ky) = Self::key(x, y);
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(points) = self.cells.get(&(kx + dx, ky + dy)) {
                    for (px, py) in points {
                        let (ex, ey) = (px - x, py - y);
                        if ex * ex + ey * ey < DEDUP_RADIUS * DEDUP_RADIUS {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Up to `neighbors_per_fluorophore` proposals around each accepted
/// fluorophore, at a distance uniform in `(0, jitter_limit]` and a uniform
/// angle. Proposals off the `width × height` canvas or within
/// [`DEDUP_RADIUS`] of any hypothesis in `existing` (or an earlier proposal)
/// are dropped. Proposals inherit their parent's intensity and width.
pub fn expand_neighbors<R: Rng + ?Sized>(
    accepted: &[FluorophoreHypothesis],
    existing: &[FluorophoreHypothesis],
    width: f64,
    height: f64,
    config: &InferenceConfig,
    rng: &mut R,
) -> Vec<FluorophoreHypothesis> {
    let mut out = Vec::new();
    if config.jitter_limit <= 0.0 || config.neighbors_per_fluorophore == 0 {
        return out;
    }
    let mut grid = SiteGrid { cells: BTreeMap::new() };
    for h in existing.iter().chain(accepted) {
        grid.insert(h.x, h.y);
    }
    for parent in accepted {
        for _ in 0..config.neighbors_per_fluorophore {
            let u: f64 = rng.random();
            let distance = config.jitter_limit * (1.0 - u);
            let angle = 2.0 * core::f64::consts::PI * rng.random::<f64>();
            let x = parent.x + distance * libm::cos(angle);
            let y = parent.y + distance * libm::sin(angle);
            if !(x >= 0.0 && x <= width && y >= 0.0 && y <= height) || grid.is_near(x, y) {
                continue;
            }
            grid.insert(x, y);
            out.push(FluorophoreHypothesis::new(
                PsfParams {
                    x,
                    y,
                    i0: parent.i0,
                    sigma: parent.sigma,
                },
                Vec::new(),
            ));
        }
    }
    out
}

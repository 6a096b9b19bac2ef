//! Independent reference implementations used by the integration and
//! acceptance tests.

#![allow(dead_code)]

use fluoroforge_core::inference::ffbs::ffbs;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Posterior state marginals by summing over every one of the `3^T` paths.
pub fn enumerate_marginals(initial: &[f64; 3], transition: &[[f64; 3]; 3], likelihood: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let t_len = likelihood.len();
    let mut marginals = vec![[0.0; 3]; t_len];
    let mut total = 0.0;
    let paths = 3usize.pow(t_len as u32);
    for code in 0..paths {
        let mut path = vec![0usize; t_len];
        let mut c = code;
        for s in path.iter_mut() {
            *s = c % 3;
            c /= 3;
        }
        let mut p = initial[path[0]] * likelihood[0][path[0]];
        for t in 1..t_len {
            p *= transition[path[t - 1]][path[t]] * likelihood[t][path[t]];
        }
        total += p;
        for (t, &s) in path.iter().enumerate() {
            marginals[t][s] += p;
        }
    }
    for m in marginals.iter_mut() {
        for v in m.iter_mut() {
            *v /= total;
        }
    }
    marginals
}

/// Textbook scaled forward-backward smoothing.
pub fn forward_backward(initial: &[f64; 3], transition: &[[f64; 3]; 3], likelihood: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let n = likelihood.len();
    let mut alpha = vec![[0.0; 3]; n];
    let mut scale = vec![0.0; n];
    for t in 0..n {
        for s in 0..3 {
            let prior = if t == 0 {
                initial[s]
            } else {
                (0..3).map(|r| alpha[t - 1][r] * transition[r][s]).sum()
            };
            alpha[t][s] = prior * likelihood[t][s];
        }
        scale[t] = alpha[t].iter().sum();
        let total = scale[t];
        alpha[t].iter_mut().for_each(|a| *a /= total);
    }
    let mut beta = vec![[1.0; 3]; n];
    for t in (0..n - 1).rev() {
        for s in 0..3 {
            beta[t][s] = (0..3)
                .map(|r| transition[s][r] * likelihood[t + 1][r] * beta[t + 1][r])
                .sum::<f64>()
                / scale[t + 1];
        }
    }
    (0..n)
        .map(|t| {
            let mut g = [0.0; 3];
            for s in 0..3 {
                g[s] = alpha[t][s] * beta[t][s];
            }
            let z: f64 = g.iter().sum();
            g.map(|v| v / z)
        })
        .collect()
}

/// Empirical per-frame state frequencies of `samples` FFBS draws.
pub fn ffbs_frequencies(
    initial: &[f64; 3],
    transition: &[[f64; 3]; 3],
    likelihood: &[[f64; 3]],
    samples: usize,
    seed: u64,
) -> Vec<[f64; 3]> {
    let log_emission: Vec<[f64; 3]> = likelihood.iter().map(|l| l.map(f64::ln)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![[0usize; 3]; likelihood.len()];
    for _ in 0..samples {
        for (t, s) in ffbs(initial, transition, &log_emission, &mut rng).into_iter().enumerate() {
            counts[t][s] += 1;
        }
    }
    counts
        .into_iter()
        .map(|c| c.map(|k| k as f64 / samples as f64))
        .collect()
}

/// Largest absolute difference between two marginal tables.
pub fn max_abs_diff(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of `f` at `p` with per-coordinate steps.
pub fn central_difference<const N: usize>(f: impl Fn(&[f64; N]) -> f64, p: &[f64; N], steps: &[f64; N]) -> [f64; N] {
    std::array::from_fn(|i| {
        let mut hi = *p;
        let mut lo = *p;
        hi[i] += steps[i];
        lo[i] -= steps[i];
        (f(&hi) - f(&lo)) / (2.0 * steps[i])
    })
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

use fluoroforge_core::imaging::{add_gaussian_noise, downsample, FrameStack, Image};
use fluoroforge_core::inference::model::Footprint;
use fluoroforge_core::inference::{reconstruct, InferenceConfig, PsfParams, ReconstructionResult};
use fluoroforge_core::photophysics::{CalibrationProfile, FluorophoreState, PhotonModel, PsfModel, TransferTable};
use fluoroforge_core::simulator::{add_background, simulate_frame, Fluorophore};

/// A single emitter that never leaves the Emitting state, with one PSF width,
/// one peak intensity and no read noise.
pub fn static_emitter_profile(fwhm: f64, i0: f64) -> CalibrationProfile {
    let mut profile = CalibrationProfile::meos32();
    profile.transfer = TransferTable::new(1.0, 0.0, 0.3, 0.6, 0.1).unwrap();
    profile.initial_state_probs = [1.0, 0.0, 0.0];
    profile.psf = PsfModel::fixed(fwhm).unwrap();
    profile.photon = PhotonModel::new(i0.ln(), 0.0).unwrap();
    profile.noise_sigma = 0.0;
    profile
}

pub struct SingleEmitterCase {
    pub truth: PsfParams,
    pub stack: FrameStack,
    pub profile: CalibrationProfile,
    pub scale: usize,
}

/// Simulates `frames` noiseless frames of one static emitter on a
/// `size·scale` square high-resolution canvas.
pub fn single_emitter_case(x: f64, y: f64, fwhm: f64, i0: f64, size: usize, frames: usize) -> SingleEmitterCase {
    let scale = 8;
    let profile = static_emitter_profile(fwhm, i0);
    let mut population = vec![Fluorophore {
        id: 0,
        x,
        y,
        state: FluorophoreState::Emitting,
        sigma: profile.psf.mean_sigma(),
    }];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let hr = size * scale;
    let observed: Vec<Image> = (0..frames)
        .map(|_| {
            let frame = simulate_frame(&mut population, &profile, hr, hr, &mut rng);
            downsample(&add_background(&frame, 0.1).unwrap(), scale).unwrap()
        })
        .collect();
    SingleEmitterCase {
        truth: PsfParams {
            x,
            y,
            i0,
            sigma: profile.psf.mean_sigma(),
        },
        stack: FrameStack::new(observed, 50.0).unwrap(),
        profile,
        scale,
    }
}

/// Reconstructs from a prior holding one bright pixel `offset` high-resolution
/// pixels right of the truth.
pub fn reconstruct_from_offset_prior(case: &SingleEmitterCase, offset: f64, seed: u64) -> ReconstructionResult {
    let hr = case.stack.width() * case.scale;
    let mut prior = Image::zeros(hr, hr);
    prior.accumulate((case.truth.x + offset) as usize, case.truth.y as usize, 1.0);
    let noise = fluoroforge_core::inference::estimate_noise_sigma(&case.stack);
    let mut config = InferenceConfig::from_profile(&case.profile, case.scale, noise);
    config.rng_seed = seed;
    // Estimate the width too instead of pinning it to the single calibrated value.
    config.sigma_bounds = (0.5 * case.truth.sigma, 2.0 * case.truth.sigma);
    config.cg.max_iterations = 200;
    reconstruct(&case.stack, &prior, &config).unwrap()
}

/// The accepted fluorophore closest to `truth`.
pub fn closest(result: &ReconstructionResult, truth: &PsfParams) -> Option<PsfParams> {
    result
        .fluorophores
        .iter()
        .map(|h| h.params())
        .min_by(|a, b| {
            let da = (a.x - truth.x).hypot(a.y - truth.y);
            let db = (b.x - truth.x).hypot(b.y - truth.y);
            da.total_cmp(&db)
        })
}

/// Microtubule-like phantom: `curves` smooth filaments crossing a
/// `size × size` canvas, each with a Gaussian cross-section of standard
/// deviation `width` pixels and unit peak (overlaps saturate at 1).
pub fn filament_phantom(size: usize, curves: usize, width: f64, seed: u64) -> Image {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size as f64;
    let mut peak = vec![0.0f64; size * size];
    let radius = (4.0 * width).ceil() as i64;
    for _ in 0..curves {
        // Quadratic Bézier between opposite edges with an interior control point.
        let p0 = (rng.random_range(0.0..n), 0.0);
        let p2 = (rng.random_range(0.0..n), n);
        let p1 = (rng.random_range(0.1 * n..0.9 * n), rng.random_range(0.1 * n..0.9 * n));
        let (p0, p1, p2) = if rng.random::<bool>() { (p0, p1, p2) } else { ((p0.1, p0.0), (p1.1, p1.0), (p2.1, p2.0)) };
        let mut line = vec![f64::INFINITY; size * size];
        let steps = 16 * size;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let u = 1.0 - t;
            let x = u * u * p0.0 + 2.0 * u * t * p1.0 + t * t * p2.0;
            let y = u * u * p0.1 + 2.0 * u * t * p1.1 + t * t * p2.1;
            let (cx, cy) = (x.floor() as i64, y.floor() as i64);
            for py in cy - radius..=cy + radius {
                for px in cx - radius..=cx + radius {
                    if px < 0 || py < 0 || px >= size as i64 || py >= size as i64 {
                        continue;
                    }
                    let d2 = (px as f64 + 0.5 - x).powi(2) + (py as f64 + 0.5 - y).powi(2);
                    let i = py as usize * size + px as usize;
                    line[i] = line[i].min(d2);
                }
            }
        }
        for (p, d2) in peak.iter_mut().zip(&line) {
            if d2.is_finite() {
                *p += (-d2 / (2.0 * width * width)).exp();
            }
        }
    }
    Image::new(size, size, 20.0, peak.into_iter().map(|v| v.min(1.0)).collect()).unwrap()
}

/// A noisy 12×12 stack with a few blinking spots.
pub fn blinking_scene(rng: &mut ChaCha8Rng) -> FrameStack {
    let spots = [
        PsfParams { x: 30.0, y: 40.0, i0: 0.7, sigma: 3.0 },
        PsfParams { x: 52.5, y: 47.0, i0: 0.5, sigma: 2.6 },
        PsfParams { x: 70.2, y: 22.9, i0: 0.9, sigma: 3.3 },
    ];
    let frames = (0..12)
        .map(|t| {
            let mut px = vec![0.02; 144];
            for (k, s) in spots.iter().enumerate() {
                if (t + k) % 3 != 0 {
                    Footprint::new(s, 8, 12, 12).add_to(&mut px, 12, s.i0);
                }
            }
            let clean = Image::new(12, 12, 160.0, px).unwrap();
            add_gaussian_noise(&clean, 0.01, rng).unwrap()
        })
        .collect();
    FrameStack::new(frames, 50.0).unwrap()
}

#[derive(Debug, Clone)]
pub struct GradientSample {
    pub point: [f64; 4],
    pub analytic: [f64; 4],
    pub numeric: [f64; 4],
    pub relative: f64,
}

/// Compares the M-step gradient with central differences at `points`
/// random interior points of random hypotheses over [`blinking_scene`].
pub fn gradient_check(points: usize, seed: u64) -> Vec<GradientSample> {
    use fluoroforge_core::inference::{FluorophoreHypothesis, Observation, ResidualContext, SpotObjective};
    use rand::Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stack = blinking_scene(&mut rng);
    let frames = stack.frame_count();
    let obs = Observation::new(&stack, 8);
    let residual = ResidualContext::new(&obs);
    let config = InferenceConfig::from_profile(&CalibrationProfile::meos32(), 8, 0.01);
    let (lo, hi) = config.sigma_bounds;
    (0..points)
        .map(|_| {
            let states: Vec<FluorophoreState> =
                (0..frames).map(|_| FluorophoreState::from_index(rng.random_range(0..2))).collect();
            let anchor = PsfParams {
                x: rng.random_range(12.0..84.0),
                y: rng.random_range(12.0..84.0),
                i0: rng.random_range(0.05..1.5),
                sigma: rng.random_range(lo..=hi),
            };
            let mut h = FluorophoreHypothesis::new(anchor, states);
            if h.emitting_count() == 0 {
                h.states[0] = FluorophoreState::Emitting;
            }
            let objective = SpotObjective::new(&h, &residual, &config).unwrap();
            // Interior point of the feasible box around the anchor.
            let point = [
                anchor.x + rng.random_range(-6.0..6.0),
                anchor.y + rng.random_range(-6.0..6.0),
                anchor.i0 * rng.random_range(0.5..2.0),
                (anchor.sigma * rng.random_range(0.8..1.2)).clamp(lo * 1.01, hi * 0.99),
            ];
            let params = |v: &[f64; 4]| PsfParams { x: v[0], y: v[1], i0: v[2], sigma: v[3] };
            let (_, analytic) = objective.value_and_gradient(&params(&point));
            let steps = [1e-5, 1e-5, 1e-6 * point[2].max(0.1), 1e-6 * point[3]];
            let numeric = central_difference(|v| objective.negative_log_posterior(&params(v)), &point, &steps);
            GradientSample {
                point,
                analytic,
                numeric,
                relative: relative_error(&analytic, &numeric),
            }
        })
        .collect()
}

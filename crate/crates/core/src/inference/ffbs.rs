//! Forward filtering, backward sampling for the three-state switching chain.

use alloc::vec::Vec;

use rand::Rng;

use crate::photophysics::{sample_categorical, FluorophoreState};

use super::{FluorophoreHypothesis, InferenceConfig, ResidualContext};

/// Normalized filtered distributions `α_t(s) ∝ p(y_t | s) Σ α_{t-1}(s') A(s', s)`.
///
/// Emissions are given in log space; each step is shifted by its maximum and
/// renormalized, so long sequences cannot underflow.
pub fn forward_filter(initial: &[f64; 3], transition: &[[f64; 3]; 3], log_emission: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut alphas: Vec<[f64; 3]> = Vec::with_capacity(log_emission.len());
    for (t, le) in log_emission.iter().enumerate() {
        let predicted = if t == 0 {
            *initial
        } else {
            let prev = &alphas[t - 1];
            let mut p = [0.0; 3];
            for (from, a) in prev.iter().enumerate() {
                for to in 0..3 {
                    p[to] += a * transition[from][to];
                }
            }
            p
        };
        let peak = le.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut alpha = [0.0; 3];
        for s in 0..3 {
            alpha[s] = predicted[s] * libm::exp(le[s] - peak);
        }
        let total: f64 = alpha.iter().sum();
        if total > 0.0 && total.is_finite() {
            alpha.iter_mut().for_each(|a| *a /= total);
        } else {
            // Every reachable state has zero likelihood; fall back to the prediction.
            let z: f64 = predicted.iter().sum();
            alpha = predicted.map(|p| p / z);
        }
        alphas.push(alpha);
    }
    alphas
}

/// Draws one state path from the exact posterior of a three-state HMM.
pub fn ffbs<R: Rng + ?Sized>(
    initial: &[f64; 3],
    transition: &[[f64; 3]; 3],
    log_emission: &[[f64; 3]],
    rng: &mut R,
) -> Vec<usize> {
    let alphas = forward_filter(initial, transition, log_emission);
    let n = alphas.len();
    let mut path = alloc::vec![0usize; n];
    if n == 0 {
        return path;
    }
    path[n - 1] = sample_categorical(&alphas[n - 1], rng);
    for t in (0..n - 1).rev() {
        let next = path[t + 1];
        let w = [
            alphas[t][0] * transition[0][next],
            alphas[t][1] * transition[1][next],
            alphas[t][2] * transition[2][next],
        ];
        path[t] = sample_categorical(&w, rng);
    }
    path
}

/// Samples a state path for one hypothesis given the residual left by all
/// other hypotheses. Emitting frames gain the Gaussian log-likelihood of the
/// spot being present; Dark and Bleached frames explain the residual as is.
pub fn e_step_ffbs<R: Rng + ?Sized>(
    hypothesis: &FluorophoreHypothesis,
    residual: &ResidualContext,
    config: &InferenceConfig,
    rng: &mut R,
) -> Vec<FluorophoreState> {
    let gains = residual.emission_gain(&hypothesis.params(), config.noise_sigma);
    let log_emission: Vec<[f64; 3]> = gains.iter().map(|&g| [g, 0.0, 0.0]).collect();
    ffbs(&config.initial_state_probs, &config.transfer.matrix(), &log_emission, rng)
        .into_iter()
        .map(FluorophoreState::from_index)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_posterior_is_uniform() {
        let a = [[1.0 / 3.0; 3]; 3];
        let le = [[0.0; 3]; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [[0usize; 3]; 4];
        let n = 30_000;
        for _ in 0..n {
            for (t, s) in ffbs(&[1.0 / 3.0; 3], &a, &le, &mut rng).into_iter().enumerate() {
                counts[t][s] += 1;
            }
        }
        for row in counts {
            for c in row {
                assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.015);
            }
        }
    }

    #[test]
    fn deterministic_chain_stays_emitting() {
        let a = [[1.0, 0.0, 0.0], [0.1, 0.8, 0.1], [0.0, 0.0, 1.0]];
        let le: Vec<[f64; 3]> = (0..50).map(|_| [40.0, 0.0, 0.0]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            assert!(ffbs(&[1.0, 0.0, 0.0], &a, &le, &mut rng).iter().all(|&s| s == 0));
        }
    }

    #[test]
    fn sampled_paths_never_leave_bleached() {
        let a = [[0.3, 0.6, 0.1], [0.2, 0.7, 0.1], [0.0, 0.0, 1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let le: Vec<[f64; 3]> = (0..40).map(|t| [((t * 7) % 5) as f64 - 2.0, 0.0, 0.0]).collect();
        for _ in 0..2000 {
            let path = ffbs(&[0.2, 0.7, 0.1], &a, &le, &mut rng);
            if let Some(b) = path.iter().position(|&s| s == 2) {
                assert!(path[b..].iter().all(|&s| s == 2));
            }
        }
    }

    #[test]
    fn huge_emissions_do_not_underflow() {
        let a = [[0.5, 0.4, 0.1], [0.2, 0.7, 0.1], [0.0, 0.0, 1.0]];
        let le: Vec<[f64; 3]> = (0..500).map(|t| if t % 2 == 0 { [-1e5, 0.0, 0.0] } else { [1e5, 0.0, 0.0] }).collect();
        let alphas = forward_filter(&[0.3, 0.7, 0.0], &a, &le);
        for al in alphas {
            assert!(al.iter().all(|v| v.is_finite()));
            assert!((al.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

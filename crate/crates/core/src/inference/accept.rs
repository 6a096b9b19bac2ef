//! Fluorophore-versus-no-fluorophore Bayes test at MAP parameters.

use super::{BayesPriors, FluorophoreHypothesis, ResidualContext};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptDecision {
    pub accepted: bool,
    /// `log P(R|F) − log P(R|N)`.
    pub log_likelihood_ratio: f64,
    /// `log [P(R|F) P(F)] − log [P(R|N) P(N)]`.
    pub log_posterior_odds: f64,
}

/// Log posterior odds from the two plug-in log-likelihoods. Only their
/// difference enters, so a common offset cancels exactly.
pub fn posterior_log_odds(loglik_with: f64, loglik_without: f64, priors: &BayesPriors) -> f64 {
    (loglik_with - loglik_without) + priors.log_odds()
}

/// Accepts iff the posterior odds of a fluorophore exceed 1. `residual` must
/// exclude the hypothesis itself. A hypothesis with no emitting frame
/// explains nothing and is rejected.
pub fn accept_test(
    h: &FluorophoreHypothesis,
    residual: &ResidualContext,
    priors: &BayesPriors,
    noise_sigma: f64,
) -> AcceptDecision {
    if h.emitting_count() == 0 {
        return AcceptDecision {
            accepted: false,
            log_likelihood_ratio: 0.0,
            log_posterior_odds: f64::NEG_INFINITY,
        };
    }
    let gains = residual.emission_gain(&h.params(), noise_sigma);
    let ratio: f64 = h.emitting_frames().map(|t| gains[t]).sum();
    let odds = posterior_log_odds(ratio, 0.0, priors);
    AcceptDecision {
        accepted: odds > 0.0,
        log_likelihood_ratio: ratio,
        log_posterior_odds: odds,
    }
}

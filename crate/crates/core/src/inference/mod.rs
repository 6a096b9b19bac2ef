//! Prior-initialized factorial-HMM reconstruction.
//!
//! Each candidate fluorophore is an independent three-state Markov chain whose
//! emissions add into the observed frames. Candidates are seeded from a
//! high-resolution prior image and refined by EM: the E-step draws a state
//! path for one hypothesis by forward filtering, backward sampling against the
//! residual left by all other hypotheses; the M-step fits its position, peak
//! intensity and width by nonlinear conjugate gradient; a Bayes-factor test
//! then keeps or drops it, and accepted fluorophores propose neighbors.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::photophysics::{validate_initial_probs, CalibrationProfile, FluorophoreState, PhotonModel, TransferTable};

mod accept;
pub mod cg;
pub mod ffbs;
pub mod model;
mod mstep;
mod proposals;
mod reconstruct;

pub use accept::{accept_test, posterior_log_odds, AcceptDecision};
pub use ffbs::e_step_ffbs;
pub use model::{estimate_background, estimate_noise_sigma, frame_loglik, Observation, ResidualContext};
pub use mstep::{m_step_map, SpotObjective};
pub use proposals::{candidate_cap, expand_neighbors, initialize_from_prior};
pub use reconstruct::{reconstruct, reconstruct_with_observation, ReconstructionResult};

/// Continuous parameters of one emitter, in high-resolution pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsfParams {
    pub x: f64,
    pub y: f64,
    pub i0: f64,
    pub sigma: f64,
}

/// A candidate emitter and its latent state path.
#[derive(Debug, Clone, PartialEq)]
pub struct FluorophoreHypothesis {
    pub x: f64,
    pub y: f64,
    pub i0: f64,
    pub sigma: f64,
    /// One state per frame; empty until the first E-step.
    pub states: Vec<FluorophoreState>,
    pub accepted: bool,
}

impl FluorophoreHypothesis {
    pub fn new(params: PsfParams, states: Vec<FluorophoreState>) -> Self {
        FluorophoreHypothesis {
            x: params.x,
            y: params.y,
            i0: params.i0,
            sigma: params.sigma,
            states,
            accepted: false,
        }
    }

    pub fn params(&self) -> PsfParams {
        PsfParams {
            x: self.x,
            y: self.y,
            i0: self.i0,
            sigma: self.sigma,
        }
    }

    pub fn set_params(&mut self, p: PsfParams) {
        self.x = p.x;
        self.y = p.y;
        self.i0 = p.i0;
        self.sigma = p.sigma;
    }

    pub fn emitting_frames(&self) -> impl Iterator<Item = usize> + '_ {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == FluorophoreState::Emitting)
            .map(|(t, _)| t)
    }

    pub fn emitting_count(&self) -> usize {
        self.emitting_frames().count()
    }

    /// No state after a Bleached one may differ from Bleached.
    pub fn respects_bleaching(&self) -> bool {
        match self.states.iter().position(|s| *s == FluorophoreState::Bleached) {
            Some(first) => self.states[first..].iter().all(|s| *s == FluorophoreState::Bleached),
            None => true,
        }
    }
}

/// Prior probabilities that a proposal site does / does not hold a fluorophore.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesPriors {
    pub p_f: f64,
    pub p_n: f64,
}

impl BayesPriors {
    pub fn new(p_f: f64) -> Result<Self> {
        if !(p_f > 0.0 && p_f < 1.0) {
            return Err(Error::invalid("p_f", "must lie strictly between 0 and 1"));
        }
        Ok(BayesPriors { p_f, p_n: 1.0 - p_f })
    }

    pub fn log_odds(&self) -> f64 {
        libm::log(self.p_f) - libm::log(self.p_n)
    }
}

impl Default for BayesPriors {
    fn default() -> Self {
        BayesPriors { p_f: 0.3, p_n: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    /// Upper bound on EM sweeps.
    pub iterations: usize,
    pub neighbors_per_fluorophore: usize,
    /// Maximum initial jitter, per-M-step displacement and neighbor distance,
    /// in high-resolution pixels.
    pub jitter_limit: f64,
    pub scale: usize,
    pub noise_sigma: f64,
    pub priors: BayesPriors,
    pub transfer: TransferTable,
    pub photon: PhotonModel,
    pub initial_state_probs: [f64; 3],
    /// PSF width given to fresh candidates.
    pub initial_sigma: f64,
    /// Feasible PSF widths for the M-step; the calibrated range by default.
    pub sigma_bounds: (f64, f64),
    /// Prior pixels below this fraction of the prior maximum seed nothing.
    pub candidate_threshold: f64,
    /// Candidate cap for a 480×480 high-resolution field; scaled by area.
    pub candidates_per_reference_field: usize,
    pub rng_seed: u64,
    /// Relative improvement in total log-posterior regarded as a plateau.
    pub convergence_tol: f64,
    /// Consecutive plateau sweeps that end the EM loop.
    pub plateau_iterations: usize,
    pub cg: cg::CgSettings,
}

impl InferenceConfig {
    /// Settings taken from a calibration profile with the usual defaults
    /// (60 sweeps, four neighbors, ±8 px jitter).
    pub fn from_profile(profile: &CalibrationProfile, scale: usize, noise_sigma: f64) -> Self {
        let (lo, hi) = profile.psf.sigma_range();
        InferenceConfig {
            iterations: 60,
            neighbors_per_fluorophore: 4,
            jitter_limit: 8.0,
            scale,
            noise_sigma,
            priors: BayesPriors::default(),
            transfer: profile.transfer,
            photon: profile.photon,
            initial_state_probs: profile.initial_state_probs,
            initial_sigma: profile.psf.mean_sigma(),
            sigma_bounds: (lo, hi),
            candidate_threshold: 0.02,
            candidates_per_reference_field: 2000,
            rng_seed: 0,
            convergence_tol: 1e-3,
            plateau_iterations: 5,
            cg: cg::CgSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "must be >= 1"));
        }
        if self.scale == 0 {
            return Err(Error::invalid("scale", "must be >= 1"));
        }
        if !(self.jitter_limit >= 0.0 && self.jitter_limit.is_finite()) {
            return Err(Error::invalid("jitter_limit", "must be finite and >= 0"));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma", "must be finite and > 0"));
        }
        let (lo, hi) = self.sigma_bounds;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid("sigma_bounds", "need 0 < lo <= hi"));
        }
        if !(self.initial_sigma >= lo && self.initial_sigma <= hi) {
            return Err(Error::invalid("initial_sigma", "outside sigma_bounds"));
        }
        if !(self.priors.p_f > 0.0 && self.priors.p_n > 0.0 && libm::fabs(self.priors.p_f + self.priors.p_n - 1.0) < 1e-9) {
            return Err(Error::invalid("priors", "p_f and p_n must be positive and sum to 1"));
        }
        validate_initial_probs(&self.initial_state_probs)
    }
}

/// SplitMix64 finalizer; derives independent seeds for tiles and substreams.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

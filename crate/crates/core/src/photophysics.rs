//! Fluorophore photophysics: the three-state switching chain, Gaussian PSF
//! rendering and the calibrated stochastic models for PSF width and peak
//! intensity.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;

/// `2 √(2 ln 2)`: ratio between the full width at half maximum and the
/// standard deviation of a Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_4;

/// PSF tails beyond this many standard deviations are not rendered.
pub const PSF_TRUNCATION_SIGMAS: f64 = 4.0;

const PROBABILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FluorophoreState {
    Emitting,
    Dark,
    /// Absorbing: nothing leaves it.
    Bleached,
}

impl FluorophoreState {
    pub const ALL: [FluorophoreState; 3] = [
        FluorophoreState::Emitting,
        FluorophoreState::Dark,
        FluorophoreState::Bleached,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn from_index(i: usize) -> FluorophoreState {
        Self::ALL[i]
    }
}

/// The five switching probabilities of the state chain.
///
/// `p1`/`p2` leave Emitting (to Emitting/Dark); whatever remains, `1 - p1 - p2`,
/// is the Emitting→Bleached probability. `p3`/`p4`/`p5` leave Dark (to
/// Emitting/Dark/Bleached) and must sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransferTable")]
pub struct TransferTable {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub p5: f64,
}

#[derive(Deserialize)]
struct RawTransferTable {
    p1: f64,
    p2: f64,
    p3: f64,
    p4: f64,
    p5: f64,
}

impl TryFrom<RawTransferTable> for TransferTable {
    type Error = Error;

    fn try_from(r: RawTransferTable) -> Result<Self> {
        TransferTable::new(r.p1, r.p2, r.p3, r.p4, r.p5)
    }
}

fn is_probability(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl TransferTable {
    pub fn new(p1: f64, p2: f64, p3: f64, p4: f64, p5: f64) -> Result<Self> {
        for (name, p) in [("p1", p1), ("p2", p2), ("p3", p3), ("p4", p4), ("p5", p5)] {
            if !is_probability(p) {
                return Err(Error::invalid("transfer table", format!("{name} = {p} is not in [0, 1]")));
            }
        }
        if p1 + p2 > 1.0 + PROBABILITY_TOLERANCE {
            return Err(Error::invalid("transfer table", "p1 + p2 exceeds 1"));
        }
        if libm::fabs(p3 + p4 + p5 - 1.0) > PROBABILITY_TOLERANCE {
            return Err(Error::invalid("transfer table", "p3 + p4 + p5 must equal 1"));
        }
        Ok(TransferTable { p1, p2, p3, p4, p5 })
    }

    /// Probability of bleaching straight from the emitting state.
    pub fn emitting_to_bleached(&self) -> f64 {
        (1.0 - self.p1 - self.p2).max(0.0)
    }

    /// Row-stochastic matrix indexed `[from][to]` in [`FluorophoreState::ALL`] order.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.p1, self.p2, self.emitting_to_bleached()],
            [self.p3, self.p4, self.p5],
            [0.0, 0.0, 1.0],
        ]
    }
}

/// Samples one categorical draw from (possibly unnormalized) weights.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // Rounding can leave `u` marginally above the last bucket.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// Advances a fluorophore by one frame.
pub fn step_state<R: Rng + ?Sized>(state: FluorophoreState, table: &TransferTable, rng: &mut R) -> FluorophoreState {
    if state == FluorophoreState::Bleached {
        return state;
    }
    let row = table.matrix()[state.index()];
    FluorophoreState::from_index(sample_categorical(&row, rng))
}

pub fn fwhm_to_sigma(fwhm: f64) -> Result<f64> {
    if !(fwhm > 0.0 && fwhm.is_finite()) {
        return Err(Error::invalid("fwhm", "must be finite and > 0"));
    }
    Ok(fwhm / FWHM_PER_SIGMA)
}

pub fn sigma_to_fwhm(sigma: f64) -> f64 {
    sigma * FWHM_PER_SIGMA
}

/// Empirical distribution of PSF widths, as `(fwhm, weight)` pairs in
/// high-resolution pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPsfModel")]
pub struct PsfModel {
    fwhm_table: Vec<(f64, f64)>,
}

#[derive(Deserialize)]
struct RawPsfModel {
    fwhm_table: Vec<(f64, f64)>,
}

impl TryFrom<RawPsfModel> for PsfModel {
    type Error = Error;

    fn try_from(r: RawPsfModel) -> Result<Self> {
        PsfModel::new(r.fwhm_table)
    }
}

impl PsfModel {
    pub fn new(fwhm_table: Vec<(f64, f64)>) -> Result<Self> {
        if fwhm_table.is_empty() {
            return Err(Error::invalid("fwhm_table", "is empty"));
        }
        for &(fwhm, weight) in &fwhm_table {
            if !(fwhm > 0.0 && fwhm.is_finite()) {
                return Err(Error::invalid("fwhm_table", format!("fwhm {fwhm} must be > 0")));
            }
            if !(weight >= 0.0 && weight.is_finite()) {
                return Err(Error::invalid("fwhm_table", format!("weight {weight} must be >= 0")));
            }
        }
        let total: f64 = fwhm_table.iter().map(|e| e.1).sum();
        if libm::fabs(total - 1.0) > 1e-6 {
            return Err(Error::invalid("fwhm_table", format!("weights sum to {total}, not 1")));
        }
        Ok(PsfModel { fwhm_table })
    }

    /// A single fixed width.
    pub fn fixed(fwhm: f64) -> Result<Self> {
        PsfModel::new(alloc::vec![(fwhm, 1.0)])
    }

    pub fn fwhm_table(&self) -> &[(f64, f64)] {
        &self.fwhm_table
    }

    /// Weighted mean PSF standard deviation.
    pub fn mean_sigma(&self) -> f64 {
        self.fwhm_table.iter().map(|&(f, w)| w * f / FWHM_PER_SIGMA).sum()
    }

    pub fn sigma_range(&self) -> (f64, f64) {
        let sigmas = self.fwhm_table.iter().map(|&(f, _)| f / FWHM_PER_SIGMA);
        sigmas.fold((f64::INFINITY, 0.0), |(lo, hi), s| (lo.min(s), hi.max(s)))
    }
}

/// Draws a PSF standard deviation from the calibrated FWHM table.
pub fn sample_psf_width<R: Rng + ?Sized>(psf: &PsfModel, rng: &mut R) -> f64 {
    let weights: Vec<f64> = psf.fwhm_table.iter().map(|e| e.1).collect();
    let fwhm = psf.fwhm_table[sample_categorical(&weights, rng)].0;
    fwhm / FWHM_PER_SIGMA
}

/// Log-normal model of the peak intensity `I0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPhotonModel")]
pub struct PhotonModel {
    pub log_mu: f64,
    pub log_sigma: f64,
}

#[derive(Deserialize)]
struct RawPhotonModel {
    log_mu: f64,
    log_sigma: f64,
}

impl TryFrom<RawPhotonModel> for PhotonModel {
    type Error = Error;

    fn try_from(r: RawPhotonModel) -> Result<Self> {
        PhotonModel::new(r.log_mu, r.log_sigma)
    }
}

impl PhotonModel {
    pub fn new(log_mu: f64, log_sigma: f64) -> Result<Self> {
        if !log_mu.is_finite() {
            return Err(Error::invalid("log_mu", "must be finite"));
        }
        if !(log_sigma >= 0.0 && log_sigma.is_finite()) {
            return Err(Error::invalid("log_sigma", "must be finite and >= 0"));
        }
        Ok(PhotonModel { log_mu, log_sigma })
    }

    pub fn median(&self) -> f64 {
        libm::exp(self.log_mu)
    }

    /// A zero `log_sigma` is a point mass and carries no usable density.
    pub fn is_degenerate(&self) -> bool {
        self.log_sigma <= 0.0
    }

    /// Log density of `i0`, or `None` for a degenerate model.
    pub fn log_density(&self, i0: f64) -> Option<f64> {
        if self.is_degenerate() || i0 <= 0.0 {
            return None;
        }
        let z = (libm::log(i0) - self.log_mu) / self.log_sigma;
        Some(-libm::log(i0) - libm::log(self.log_sigma) - 0.5 * libm::log(2.0 * core::f64::consts::PI) - 0.5 * z * z)
    }

    /// Derivative of [`Self::log_density`] with respect to `i0`.
    pub fn log_density_derivative(&self, i0: f64) -> Option<f64> {
        if self.is_degenerate() || i0 <= 0.0 {
            return None;
        }
        let s2 = self.log_sigma * self.log_sigma;
        Some(-(1.0 + (libm::log(i0) - self.log_mu) / s2) / i0)
    }
}

pub fn sample_photon_intensity<R: Rng + ?Sized>(photon: &PhotonModel, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    libm::exp(photon.log_mu + photon.log_sigma * z)
}

/// Everything the simulator needs to know about a fluorophore species and
/// the acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile")]
pub struct CalibrationProfile {
    pub transfer: TransferTable,
    pub psf: PsfModel,
    pub photon: PhotonModel,
    pub background_factor_range: [f64; 2],
    pub noise_sigma: f64,
    pub initial_state_probs: [f64; 3],
}

#[derive(Deserialize)]
struct RawProfile {
    transfer: TransferTable,
    psf: PsfModel,
    photon: PhotonModel,
    background_factor_range: [f64; 2],
    noise_sigma: f64,
    initial_state_probs: [f64; 3],
}

impl TryFrom<RawProfile> for CalibrationProfile {
    type Error = Error;

    fn try_from(r: RawProfile) -> Result<Self> {
        let profile = CalibrationProfile {
            transfer: r.transfer,
            psf: r.psf,
            photon: r.photon,
            background_factor_range: r.background_factor_range,
            noise_sigma: r.noise_sigma,
            initial_state_probs: r.initial_state_probs,
        };
        profile.validate()?;
        Ok(profile)
    }
}

impl CalibrationProfile {
    /// mEos3.2-like engineering defaults. These are not published calibration
    /// values; load a measured profile for real work.
    pub fn meos32() -> Self {
        CalibrationProfile {
            transfer: TransferTable::new(0.3, 0.65, 0.05, 0.935, 0.015).expect("valid defaults"),
            psf: PsfModel::new(alloc::vec![(6.0, 0.5), (7.0, 0.3), (8.0, 0.2)]).expect("valid defaults"),
            photon: PhotonModel::new(libm::log(0.6), 0.3).expect("valid defaults"),
            background_factor_range: [0.05, 0.15],
            noise_sigma: 0.01,
            initial_state_probs: [0.1, 0.9, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.background_factor_range;
        if !(0.0..1.0).contains(&lo) || !(0.0..1.0).contains(&hi) || lo > hi {
            return Err(Error::invalid("background_factor_range", "need 0 <= lo <= hi < 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma", "must be finite and >= 0"));
        }
        validate_initial_probs(&self.initial_state_probs)
    }
}

pub(crate) fn validate_initial_probs(p: &[f64; 3]) -> Result<()> {
    if p.iter().any(|&v| !is_probability(v)) || libm::fabs(p.iter().sum::<f64>() - 1.0) > PROBABILITY_TOLERANCE {
        return Err(Error::invalid("initial_state_probs", "must be probabilities summing to 1"));
    }
    Ok(())
}

/// Adds a Gaussian spot of peak `i0` centered at the continuous position
/// `(x0, y0)` to `canvas`, sampling at pixel centers. Pixels farther than
/// [`PSF_TRUNCATION_SIGMAS`]·σ from the center are skipped; the center may lie
/// off-canvas.
pub fn render_psf(canvas: &mut Image, x0: f64, y0: f64, i0: f64, sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("psf sigma", "must be finite and > 0"));
    }
    if !(i0 >= 0.0 && i0.is_finite()) {
        return Err(Error::invalid("peak intensity", "must be finite and >= 0"));
    }
    let radius = PSF_TRUNCATION_SIGMAS * sigma;
    let Some((xs, xe)) = pixel_span(x0, radius, canvas.width()) else {
        return Ok(());
    };
    let Some((ys, ye)) = pixel_span(y0, radius, canvas.height()) else {
        return Ok(());
    };
    let inv = 1.0 / (2.0 * sigma * sigma);
    let r2 = radius * radius;
    for y in ys..=ye {
        let dy = y as f64 + 0.5 - y0;
        for x in xs..=xe {
            let dx = x as f64 + 0.5 - x0;
            let d2 = dx * dx + dy * dy;
            if d2 <= r2 {
                canvas.accumulate(x, y, i0 * libm::exp(-d2 * inv));
            }
        }
    }
    Ok(())
}

/// Inclusive range of pixel indices whose centers lie within `radius` of `c`.
pub(crate) fn pixel_span(c: f64, radius: f64, len: usize) -> Option<(usize, usize)> {
    let lo = libm::ceil(c - radius - 0.5).max(0.0);
    let hi = libm::floor(c + radius - 0.5).min(len as f64 - 1.0);
    if hi < lo {
        None
    } else {
        Some((lo as usize, hi as usize))
    }
}

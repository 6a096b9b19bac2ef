//! Forward model of the observed stack: per-hypothesis low-resolution
//! footprints, per-frame background, and the residual bookkeeping shared by
//! the E-step, the M-step and the acceptance test.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::imaging::{percentile, FrameStack};
use crate::photophysics::pixel_span;

use super::{FluorophoreHypothesis, PsfParams};

/// The model footprint is truncated this many σ from the center. The tail
/// beyond is below `exp(-32)` of the peak, so the objective stays smooth for
/// finite-difference checks.
pub const MODEL_RADIUS_SIGMAS: f64 = 8.0;

/// Quantile of each frame taken as its background level.
pub const BACKGROUND_QUANTILE: f64 = 0.1;

/// One axis of a separable low-resolution footprint.
///
/// `values[k]` is `(1/s) Σ exp(-(i + 0.5 - c)² / 2σ²)` over the
/// high-resolution pixels `i` of low-resolution block `start + k`.
#[derive(Debug, Clone, Default)]
pub struct AxisProfile {
    pub start: usize,
    pub values: Vec<f64>,
    pub d_center: Vec<f64>,
    pub d_sigma: Vec<f64>,
}

impl AxisProfile {
    pub fn new(center: f64, sigma: f64, scale: usize, blocks: usize, derivatives: bool) -> AxisProfile {
        let Some((lo, hi)) = pixel_span(center, MODEL_RADIUS_SIGMAS * sigma, blocks * scale) else {
            return AxisProfile::default();
        };
        let start = lo / scale;
        let n = hi / scale - start + 1;
        let mut p = AxisProfile {
            start,
            values: vec![0.0; n],
            d_center: if derivatives { vec![0.0; n] } else { Vec::new() },
            d_sigma: if derivatives { vec![0.0; n] } else { Vec::new() },
        };
        let inv_s = 1.0 / scale as f64;
        let inv_var = 1.0 / (sigma * sigma);
        for i in lo..=hi {
            let d = i as f64 + 0.5 - center;
            let e = libm::exp(-0.5 * d * d * inv_var) * inv_s;
            let k = i / scale - start;
            p.values[k] += e;
            if derivatives {
                p.d_center[k] += e * d * inv_var;
                p.d_sigma[k] += e * d * d * inv_var / sigma;
            }
        }
        p
    }

    pub fn end(&self) -> usize {
        self.start + self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Unit-intensity low-resolution image of one spot, `g(c, r) = cols[c] · rows[r]`.
#[derive(Debug, Clone)]
pub struct Footprint {
    pub cols: AxisProfile,
    pub rows: AxisProfile,
}

impl Footprint {
    pub fn new(params: &PsfParams, scale: usize, width: usize, height: usize) -> Footprint {
        Footprint {
            cols: AxisProfile::new(params.x, params.sigma, scale, width, false),
            rows: AxisProfile::new(params.y, params.sigma, scale, height, false),
        }
    }

    pub fn with_derivatives(params: &PsfParams, scale: usize, width: usize, height: usize) -> Footprint {
        Footprint {
            cols: AxisProfile::new(params.x, params.sigma, scale, width, true),
            rows: AxisProfile::new(params.y, params.sigma, scale, height, true),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty() || self.rows.is_empty()
    }

    /// `Σ g²` over the footprint.
    pub fn energy(&self) -> f64 {
        let sx: f64 = self.cols.values.iter().map(|v| v * v).sum();
        let sy: f64 = self.rows.values.iter().map(|v| v * v).sum();
        sx * sy
    }

    /// `Σ image · g` for a row-major low-resolution image of the given width.
    pub fn correlate(&self, image: &[f64], width: usize) -> f64 {
        let mut total = 0.0;
        for (kr, gy) in self.rows.values.iter().enumerate() {
            let row = &image[(self.rows.start + kr) * width..];
            let inner: f64 = self
                .cols
                .values
                .iter()
                .enumerate()
                .map(|(kc, gx)| row[self.cols.start + kc] * gx)
                .sum();
            total += gy * inner;
        }
        total
    }

    /// `image += amount · g`.
    pub fn add_to(&self, image: &mut [f64], width: usize, amount: f64) {
        for (kr, gy) in self.rows.values.iter().enumerate() {
            let base = (self.rows.start + kr) * width + self.cols.start;
            let a = amount * gy;
            for (kc, gx) in self.cols.values.iter().enumerate() {
                image[base + kc] += a * gx;
            }
        }
    }
}

/// Estimates each frame's DC level as its 10th-percentile pixel.
pub fn estimate_background(stack: &FrameStack) -> Vec<f64> {
    stack
        .frames()
        .iter()
        .map(|f| percentile(f.pixels(), BACKGROUND_QUANTILE))
        .collect()
}

/// Median temporal standard deviation over the dimmest decile of pixels
/// (ranked by temporal mean), floored at one 16-bit quantization step.
pub fn estimate_noise_sigma(stack: &FrameStack) -> f64 {
    let n = stack.width() * stack.height();
    let t = stack.frame_count() as f64;
    let mut stats: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let mean = stack.frames().iter().map(|f| f.pixels()[i]).sum::<f64>() / t;
            let var = stack
                .frames()
                .iter()
                .map(|f| {
                    let d = f.pixels()[i] - mean;
                    d * d
                })
                .sum::<f64>()
                / t;
            (mean, libm::sqrt(var))
        })
        .collect();
    stats.sort_by(|a, b| a.0.total_cmp(&b.0));
    let decile = n.div_ceil(10);
    let mut stds: Vec<f64> = stats[..decile].iter().map(|s| s.1).collect();
    stds.sort_by(f64::total_cmp);
    let median = stds[stds.len() / 2];
    median.max(1.0 / 65535.0)
}

/// An observed stack together with its background estimate and the
/// high-resolution scale factor used by the model.
#[derive(Debug, Clone)]
pub struct Observation<'a> {
    stack: &'a FrameStack,
    background: Vec<f64>,
    scale: usize,
}

impl<'a> Observation<'a> {
    pub fn new(stack: &'a FrameStack, scale: usize) -> Self {
        Observation {
            stack,
            background: estimate_background(stack),
            scale,
        }
    }

    pub fn with_background(stack: &'a FrameStack, scale: usize, background: Vec<f64>) -> Result<Self> {
        if background.len() != stack.frame_count() {
            return Err(Error::invalid("background", "needs one value per frame"));
        }
        Ok(Observation { stack, background, scale })
    }

    pub fn stack(&self) -> &FrameStack {
        self.stack
    }

    pub fn background(&self) -> &[f64] {
        &self.background
    }

    pub fn scale(&self) -> usize {
        self.scale
    }
}

/// Per-frame data minus background minus every included hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualContext {
    width: usize,
    height: usize,
    frames: usize,
    scale: usize,
    data: Vec<f64>,
}

impl ResidualContext {
    /// Residual with no hypotheses included.
    pub fn new(obs: &Observation<'_>) -> Self {
        let stack = obs.stack();
        let (width, height) = stack.dims();
        let mut data = Vec::with_capacity(width * height * stack.frame_count());
        for (frame, bg) in stack.frames().iter().zip(&obs.background) {
            data.extend(frame.pixels().iter().map(|v| v - bg));
        }
        ResidualContext {
            width,
            height,
            frames: stack.frame_count(),
            scale: obs.scale,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn footprint(&self, params: &PsfParams) -> Footprint {
        Footprint::new(params, self.scale, self.width, self.height)
    }

    fn apply(&mut self, h: &FluorophoreHypothesis, sign: f64) {
        if h.states.is_empty() {
            return;
        }
        let fp = self.footprint(&h.params());
        if fp.is_empty() {
            return;
        }
        let n = self.width * self.height;
        for t in h.emitting_frames() {
            fp.add_to(&mut self.data[t * n..(t + 1) * n], self.width, sign * h.i0);
        }
    }

    /// Takes the hypothesis out of the model (its contribution returns to the residual).
    pub fn exclude(&mut self, h: &FluorophoreHypothesis) {
        self.apply(h, 1.0);
    }

    /// Adds the hypothesis to the model.
    pub fn include(&mut self, h: &FluorophoreHypothesis) {
        self.apply(h, -1.0);
    }

    /// Gaussian log-likelihood of the data under the current model.
    pub fn log_likelihood(&self, noise_sigma: f64) -> f64 {
        let inv = 1.0 / (2.0 * noise_sigma * noise_sigma);
        let norm = 0.5 * libm::log(2.0 * core::f64::consts::PI * noise_sigma * noise_sigma);
        let sq: f64 = self.data.iter().map(|r| r * r).sum();
        -sq * inv - norm * self.data.len() as f64
    }

    /// Per-frame log-likelihood gain of showing `params` at unit emission,
    /// `(2 I0 Σ r g − I0² Σ g²) / 2σ²`, relative to not showing it.
    pub fn emission_gain(&self, params: &PsfParams, noise_sigma: f64) -> Vec<f64> {
        let fp = self.footprint(params);
        if fp.is_empty() {
            return vec![0.0; self.frames];
        }
        let energy = fp.energy();
        let inv = 1.0 / (2.0 * noise_sigma * noise_sigma);
        (0..self.frames)
            .map(|t| {
                let a = fp.correlate(self.frame(t), self.width);
                (2.0 * params.i0 * a - params.i0 * params.i0 * energy) * inv
            })
            .collect()
    }
}

/// Log-likelihood of the stack given a set of hypotheses with complete state
/// sequences, under i.i.d. Gaussian pixel noise.
pub fn frame_loglik(obs: &Observation<'_>, hypotheses: &[FluorophoreHypothesis], noise_sigma: f64) -> Result<f64> {
    if !(noise_sigma > 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid("noise_sigma", "must be finite and > 0"));
    }
    let mut residual = ResidualContext::new(obs);
    for h in hypotheses {
        if h.states.len() != obs.stack().frame_count() {
            return Err(Error::invalid("hypothesis", "state sequence length differs from frame count"));
        }
        residual.include(h);
    }
    Ok(residual.log_likelihood(noise_sigma))
}

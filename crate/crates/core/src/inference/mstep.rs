//! MAP refit of one hypothesis's continuous parameters with its state path fixed.

use alloc::vec;
use alloc::vec::Vec;

use crate::photophysics::{pixel_span, PhotonModel};

use super::cg::{minimize_bounded, CgSettings};
use super::model::{AxisProfile, MODEL_RADIUS_SIGMAS};
use super::{FluorophoreHypothesis, InferenceConfig, PsfParams, ResidualContext};

/// Smallest peak intensity the M-step will consider.
const MIN_INTENSITY: f64 = 1e-9;

/// Negative log-posterior of `(x, y, I0, σ)` for one hypothesis given its
/// state path and the residual of every other hypothesis, up to a constant:
///
/// `f = (−2 I0 Σ S·g + n_E I0² Σ g²) / 2σ_n² − log p(I0)`
///
/// where `S` is the residual summed over the hypothesis's emitting frames and
/// `n_E` the number of those frames. The sum is cached over a window large
/// enough for every feasible position and width.
#[derive(Debug, Clone)]
pub struct SpotObjective {
    anchor: PsfParams,
    lower: [f64; 4],
    upper: [f64; 4],
    scale: usize,
    width: usize,
    height: usize,
    col0: usize,
    row0: usize,
    window_cols: usize,
    window_rows: usize,
    summed: Vec<f64>,
    emitting: f64,
    inv_two_var: f64,
    photon: PhotonModel,
}

fn block_span(center: f64, radius: f64, scale: usize, blocks: usize) -> Option<(usize, usize)> {
    pixel_span(center, radius, blocks * scale).map(|(lo, hi)| (lo / scale, hi / scale))
}

impl SpotObjective {
    /// `None` when the hypothesis has no emitting frame or its window misses the canvas.
    pub fn new(h: &FluorophoreHypothesis, residual: &ResidualContext, config: &InferenceConfig) -> Option<Self> {
        let emitting: Vec<usize> = h.emitting_frames().collect();
        if emitting.is_empty() {
            return None;
        }
        let (width, height, scale) = (residual.width(), residual.height(), residual.scale());
        let (canvas_w, canvas_h) = ((width * scale) as f64, (height * scale) as f64);
        let jitter = config.jitter_limit;
        let (sig_lo, sig_hi) = config.sigma_bounds;
        let reach = jitter + MODEL_RADIUS_SIGMAS * sig_hi;
        let (c_lo, c_hi) = block_span(h.x, reach, scale, width)?;
        let (r_lo, r_hi) = block_span(h.y, reach, scale, height)?;
        let (window_cols, window_rows) = (c_hi - c_lo + 1, r_hi - r_lo + 1);

        let mut summed = vec![0.0; window_cols * window_rows];
        for t in emitting.iter().copied() {
            let frame = residual.frame(t);
            for r in 0..window_rows {
                let src = &frame[(r_lo + r) * width + c_lo..][..window_cols];
                for (acc, v) in summed[r * window_cols..][..window_cols].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }

        let clamp_box = |v: f64, lo: f64, hi: f64| if lo <= hi { (lo, hi) } else { (v, v) };
        let (x_lo, x_hi) = clamp_box(h.x, (h.x - jitter).max(0.0), (h.x + jitter).min(canvas_w));
        let (y_lo, y_hi) = clamp_box(h.y, (h.y - jitter).max(0.0), (h.y + jitter).min(canvas_h));
        Some(SpotObjective {
            anchor: h.params(),
            lower: [x_lo, y_lo, MIN_INTENSITY, sig_lo],
            upper: [x_hi, y_hi, f64::INFINITY, sig_hi],
            scale,
            width,
            height,
            col0: c_lo,
            row0: r_lo,
            window_cols,
            window_rows,
            summed,
            emitting: emitting.len() as f64,
            inv_two_var: 1.0 / (2.0 * config.noise_sigma * config.noise_sigma),
            photon: config.photon,
        })
    }

    /// Box of feasible `[x, y, I0, σ]`.
    pub fn bounds(&self) -> ([f64; 4], [f64; 4]) {
        (self.lower, self.upper)
    }

    pub fn is_feasible(&self, p: &PsfParams) -> bool {
        let v = [p.x, p.y, p.i0, p.sigma];
        (0..4).all(|i| v[i] >= self.lower[i] && v[i] <= self.upper[i])
    }

    pub fn negative_log_posterior(&self, p: &PsfParams) -> f64 {
        self.evaluate(p, false).0
    }

    /// Value and gradient with respect to `[x, y, I0, σ]`.
    pub fn value_and_gradient(&self, p: &PsfParams) -> (f64, [f64; 4]) {
        self.evaluate(p, true)
    }

    fn evaluate(&self, p: &PsfParams, derivatives: bool) -> (f64, [f64; 4]) {
        let cols = AxisProfile::new(p.x, p.sigma, self.scale, self.width, derivatives);
        let rows = AxisProfile::new(p.y, p.sigma, self.scale, self.height, derivatives);

        // A = Σ S g and its partials; cells outside the cached window count as zero.
        let (mut a, mut a_x, mut a_y, mut a_s) = (0.0, 0.0, 0.0, 0.0);
        for (kr, gy) in rows.values.iter().enumerate() {
            let r = rows.start + kr;
            if r < self.row0 || r >= self.row0 + self.window_rows {
                continue;
            }
            let line = &self.summed[(r - self.row0) * self.window_cols..][..self.window_cols];
            let (mut sx, mut sx_c, mut sx_s) = (0.0, 0.0, 0.0);
            for (kc, gx) in cols.values.iter().enumerate() {
                let c = cols.start + kc;
                if c < self.col0 || c >= self.col0 + self.window_cols {
                    continue;
                }
                let s = line[c - self.col0];
                sx += s * gx;
                if derivatives {
                    sx_c += s * cols.d_center[kc];
                    sx_s += s * cols.d_sigma[kc];
                }
            }
            a += gy * sx;
            if derivatives {
                a_x += gy * sx_c;
                a_y += rows.d_center[kr] * sx;
                a_s += rows.d_sigma[kr] * sx + gy * sx_s;
            }
        }

        let energy = |q: &AxisProfile| -> (f64, f64, f64) {
            let mut e = (0.0, 0.0, 0.0);
            for (k, v) in q.values.iter().enumerate() {
                e.0 += v * v;
                if derivatives {
                    e.1 += 2.0 * v * q.d_center[k];
                    e.2 += 2.0 * v * q.d_sigma[k];
                }
            }
            e
        };
        let (bx, bx_c, bx_s) = energy(&cols);
        let (by, by_c, by_s) = energy(&rows);
        let b = bx * by;

        let (i0, n, k) = (p.i0, self.emitting, self.inv_two_var);
        let (log_prior, d_log_prior) = match (self.photon.log_density(i0), self.photon.log_density_derivative(i0)) {
            (Some(v), Some(d)) => (v, d),
            _ => (0.0, 0.0),
        };
        let value = k * (-2.0 * i0 * a + n * i0 * i0 * b) - log_prior;
        if !derivatives {
            return (value, [0.0; 4]);
        }
        let grad = [
            k * (-2.0 * i0 * a_x + n * i0 * i0 * bx_c * by),
            k * (-2.0 * i0 * a_y + n * i0 * i0 * bx * by_c),
            k * (-2.0 * a + 2.0 * n * i0 * b) - d_log_prior,
            k * (-2.0 * i0 * a_s + n * i0 * i0 * (bx_s * by + bx * by_s)),
        ];
        (value, grad)
    }

    /// Conjugate-gradient MAP fit from the hypothesis's current parameters.
    /// Intensity and width are optimized relative to their entry values so
    /// all four coordinates have comparable scale.
    pub fn maximize(&self, settings: &CgSettings) -> PsfParams {
        let entry = PsfParams {
            x: self.anchor.x.clamp(self.lower[0], self.upper[0]),
            y: self.anchor.y.clamp(self.lower[1], self.upper[1]),
            i0: self.anchor.i0.max(MIN_INTENSITY),
            sigma: self.anchor.sigma.clamp(self.lower[3], self.upper[3]),
        };
        let unit = [1.0, 1.0, entry.i0, entry.sigma];
        let to_params = |z: &[f64; 4]| PsfParams {
            x: z[0],
            y: z[1],
            i0: z[2] * unit[2],
            sigma: z[3] * unit[3],
        };
        let mut objective = |z: &[f64; 4]| {
            let (v, g) = self.value_and_gradient(&to_params(z));
            v.is_finite().then(|| (v, core::array::from_fn(|i| g[i] * unit[i])))
        };
        let lower: [f64; 4] = core::array::from_fn(|i| self.lower[i] / unit[i]);
        let upper: [f64; 4] = core::array::from_fn(|i| self.upper[i] / unit[i]);
        let start = [entry.x, entry.y, 1.0, 1.0];
        match minimize_bounded(&mut objective, start, &lower, &upper, settings) {
            Some(out) => {
                // Rounding in the rescaling can nudge a coordinate past its bound.
                let mut p = to_params(&out.point);
                p.i0 = p.i0.max(MIN_INTENSITY);
                p.sigma = p.sigma.clamp(self.lower[3], self.upper[3]);
                debug_assert!(self.negative_log_posterior(&p) <= self.negative_log_posterior(&entry) + 1e-9 * (1.0 + out.value.abs()));
                p
            }
            None => entry,
        }
    }
}

/// M-step for one hypothesis. `None` when it has no emitting frame and so
/// cannot be fitted; the caller rejects it.
pub fn m_step_map(h: &FluorophoreHypothesis, residual: &ResidualContext, config: &InferenceConfig) -> Option<PsfParams> {
    let objective = SpotObjective::new(h, residual, config)?;
    Some(objective.maximize(&config.cg))
}

//! Reconstruction quality: PSNR, SSIM and resolution-scaled Pearson
//! coefficient / error against a diffraction-limited reference.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{gaussian_kernel, Image};

/// Full-scale value of one 16-bit intensity step, for reporting RSE in raw units.
pub const RAW_SCALE: f64 = 65535.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            actual: b.dims(),
        });
    }
    Ok(())
}

fn mean_squared_error(a: &Image, b: &Image) -> f64 {
    let n = a.pixels().len() as f64;
    a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// `10 log10(max² / MSE)` in dB; `f64::INFINITY` for identical images.
pub fn psnr(truth: &Image, test: &Image, max_value: f64) -> Result<f64> {
    same_dims(truth, test)?;
    if !(max_value > 0.0 && max_value.is_finite()) {
        return Err(Error::invalid("max_value", "must be finite and > 0"));
    }
    let mse = mean_squared_error(truth, test);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(max_value * max_value / mse))
}

/// Mean SSIM and the means of its two factors over all window positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimTerms {
    pub ssim: f64,
    /// `(2 μx μy + C1) / (μx² + μy² + C1)`.
    pub luminance: f64,
    /// `(2 σxy + C2) / (σx² + σy² + C2)`.
    pub contrast_structure: f64,
}

/// Gaussian-weighted local statistics at every fully contained window.
fn windowed(image: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (ow, oh) = (width - k + 1, height - k + 1);
    let mut horiz = vec![0.0; ow * height];
    for y in 0..height {
        let row = &image[y * width..(y + 1) * width];
        for x in 0..ow {
            horiz[y * ow + x] = kernel.iter().zip(&row[x..x + k]).map(|(w, v)| w * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = kernel.iter().enumerate().map(|(j, w)| w * horiz[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// SSIM with an 11×11 Gaussian window (σ = 1.5), K1 = 0.01, K2 = 0.03, L = 1.
pub fn ssim_terms(truth: &Image, test: &Image) -> Result<SsimTerms> {
    same_dims(truth, test)?;
    let (w, h) = truth.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid("ssim", "images must be at least 11x11"));
    }
    let kernel = gaussian_kernel_exact(SSIM_SIGMA, SSIM_WINDOW / 2);
    let (a, b) = (truth.pixels(), test.pixels());
    let products = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect() };
    let mu_a = windowed(a, w, h, &kernel);
    let mu_b = windowed(b, w, h, &kernel);
    let aa = windowed(&products(&|x, _| x * x), w, h, &kernel);
    let bb = windowed(&products(&|_, y| y * y), w, h, &kernel);
    let ab = windowed(&products(&|x, y| x * y), w, h, &kernel);
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let n = mu_a.len() as f64;
    let (mut total, mut lum, mut cs) = (0.0, 0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = aa[i] - ma * ma;
        let var_b = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        let s = (2.0 * cov + c2) / (var_a + var_b + c2);
        total += l * s;
        lum += l;
        cs += s;
    }
    Ok(SsimTerms {
        ssim: total / n,
        luminance: lum / n,
        contrast_structure: cs / n,
    })
}

pub fn ssim(truth: &Image, test: &Image) -> Result<f64> {
    Ok(ssim_terms(truth, test)?.ssim)
}

/// Normalized Gaussian taps on `[-radius, radius]`.
fn gaussian_kernel_exact(sigma: f64, radius: usize) -> Vec<f64> {
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            libm::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Pearson correlation; 0 when either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / libm::sqrt(saa * sbb)).clamp(-1.0, 1.0)
}

/// Evenly spaced PSF widths (low-resolution pixels) searched by [`rsp_rse`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for SigmaGrid {
    fn default() -> Self {
        SigmaGrid {
            min: 0.5,
            max: 4.0,
            points: 20,
        }
    }
}

impl SigmaGrid {
    pub fn validate(&self) -> Result<()> {
        if self.points == 0 {
            return Err(Error::invalid("sigma grid", "needs at least one point"));
        }
        if !(self.min > 0.0 && self.min <= self.max && self.max.is_finite()) {
            return Err(Error::invalid("sigma grid", "need 0 < min <= max"));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.points - 1) as f64;
        (0..self.points).map(|k| self.min + k as f64 * step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquirrelFit {
    pub rsp: f64,
    /// Root-mean-square residual in raw 16-bit units.
    pub rse: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Best-fit blur width in low-resolution pixels.
    pub sigma_star: f64,
}

/// Sparse rows of the 1-D operator "blur with edge renormalization, then
/// block-average": `out[c] = Σ_j weights[j - start] · v[j]`.
struct AxisOperator {
    rows: Vec<(usize, Vec<f64>)>,
}

impl AxisOperator {
    fn new(len: usize, scale: usize, sigma: f64) -> Self {
        let kernel = gaussian_kernel(sigma);
        let radius = kernel.len() / 2;
        let blocks = len / scale;
        let rows = (0..blocks)
            .map(|c| {
                let (first, last) = (c * scale, c * scale + scale - 1);
                let start = first.saturating_sub(radius);
                let end = (last + radius).min(len - 1);
                let mut weights = vec![0.0; end - start + 1];
                for i in first..=last {
                    let lo = i.saturating_sub(radius);
                    let hi = (i + radius).min(len - 1);
                    let norm: f64 = (lo..=hi).map(|j| kernel[j + radius - i]).sum();
                    for j in lo..=hi {
                        weights[j - start] += kernel[j + radius - i] / (norm * scale as f64);
                    }
                }
                (start, weights)
            })
            .collect();
        AxisOperator { rows }
    }
}

/// `downsample(gaussian_blur(sr, sigma_hr), scale)` via separable operators.
fn blur_and_bin(sr: &Image, scale: usize, sigma_hr: f64) -> Vec<f64> {
    let (w, h) = sr.dims();
    let (lw, lh) = (w / scale, h / scale);
    let px = sr.pixels();
    if sigma_hr == 0.0 {
        let mut out = vec![0.0; lw * lh];
        for y in 0..h {
            for x in 0..w {
                out[(y / scale) * lw + x / scale] += px[y * w + x];
            }
        }
        let area = (scale * scale) as f64;
        out.iter_mut().for_each(|v| *v /= area);
        return out;
    }
    let cols = AxisOperator::new(w, scale, sigma_hr);
    let rows = AxisOperator::new(h, scale, sigma_hr);
    let mut horiz = vec![0.0; lw * h];
    for y in 0..h {
        let line = &px[y * w..(y + 1) * w];
        for (c, (start, weights)) in cols.rows.iter().enumerate() {
            horiz[y * lw + c] = weights.iter().zip(&line[*start..]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; lw * lh];
    for (r, (start, weights)) in rows.rows.iter().enumerate() {
        for (k, wgt) in weights.iter().enumerate() {
            let src = &horiz[(start + k) * lw..][..lw];
            for (o, v) in out[r * lw..][..lw].iter_mut().zip(src) {
                *o += wgt * v;
            }
        }
    }
    out
}

struct LinearFit {
    alpha: f64,
    beta: f64,
    sse: f64,
}

fn fit_affine(reference: &[f64], blurred: &[f64]) -> LinearFit {
    let n = reference.len() as f64;
    let mr = reference.iter().sum::<f64>() / n;
    let mb = blurred.iter().sum::<f64>() / n;
    let (mut sbb, mut sbr) = (0.0, 0.0);
    for (r, b) in reference.iter().zip(blurred) {
        sbb += (b - mb) * (b - mb);
        sbr += (b - mb) * (r - mr);
    }
    let alpha = if sbb > 0.0 { sbr / sbb } else { 0.0 };
    let beta = mr - alpha * mb;
    let sse = reference
        .iter()
        .zip(blurred)
        .map(|(r, b)| {
            let e = r - (alpha * b + beta);
            e * e
        })
        .sum();
    LinearFit { alpha, beta, sse }
}

/// Finds the blur width, gain and offset that best map `sr` onto the
/// low-resolution `reference`, then scores the match. The grid minimum is
/// refined by golden-section search between its neighbors; the refined width
/// is kept only if it fits strictly better.
pub fn rsp_rse(reference: &Image, sr: &Image, scale: usize, grid: &SigmaGrid) -> Result<SquirrelFit> {
    grid.validate()?;
    if scale == 0 {
        return Err(Error::invalid("scale", "must be >= 1"));
    }
    let expected = (reference.width() * scale, reference.height() * scale);
    if sr.dims() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: sr.dims(),
        });
    }
    let refpx = reference.pixels();
    let s = scale as f64;
    let eval = |sigma: f64| fit_affine(refpx, &blur_and_bin(sr, scale, sigma * s));

    let sigmas = grid.values();
    let fits: Vec<LinearFit> = sigmas.iter().map(|&sg| eval(sg)).collect();
    let mut best_k = 0;
    for k in 1..fits.len() {
        if fits[k].sse < fits[best_k].sse {
            best_k = k;
        }
    }
    let mut sigma_star = sigmas[best_k];
    let mut best = fits.into_iter().nth(best_k).unwrap_or_else(|| eval(sigma_star));

    if sigmas.len() > 1 {
        let lo = sigmas[best_k.saturating_sub(1)];
        let hi = sigmas[(best_k + 1).min(sigmas.len() - 1)];
        let inv_phi = (libm::sqrt(5.0) - 1.0) / 2.0;
        let (mut a, mut b) = (lo, hi);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (eval(c).sse, eval(d).sse);
        for _ in 0..40 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = eval(c).sse;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = eval(d).sse;
            }
        }
        let candidate = 0.5 * (a + b);
        let refined = eval(candidate);
        if refined.sse < best.sse {
            best = refined;
            sigma_star = candidate;
        }
    }

    let blurred = blur_and_bin(sr, scale, sigma_star * s);
    let fitted: Vec<f64> = blurred.iter().map(|b| best.alpha * b + best.beta).collect();
    let rsp = pearson(refpx, &fitted);
    let rse = libm::sqrt(best.sse / refpx.len() as f64) * RAW_SCALE;
    Ok(SquirrelFit {
        rsp,
        rse,
        alpha: best.alpha,
        beta: best.beta,
        sigma_star,
    })
}

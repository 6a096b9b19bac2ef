//! Single-channel images, frame stacks and the pixel operations shared by the
//! simulator, the reconstruction and the metrics.
//!
//! Intensities live on a normalized scale where `1.0` is the 16-bit sensor
//! saturation reference. Pixels are stored row-major and pixel `(x, y)` covers
//! the continuous square `[x, x + 1) × [y, y + 1)`, so its center sits at
//! `(x + 0.5, y + 0.5)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Default physical pixel size attached to images that carry no metadata.
pub const DEFAULT_PIXEL_SIZE_NM: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixel_size_nm: f64,
    pixels: Vec<f64>,
}

impl Image {
    /// Builds an image, validating size and pixel values.
    pub fn new(width: usize, height: usize, pixel_size_nm: f64, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if pixels.len() != width * height {
            return Err(Error::PixelCount {
                width,
                height,
                len: pixels.len(),
            });
        }
        if !(pixel_size_nm > 0.0 && pixel_size_nm.is_finite()) {
            return Err(Error::invalid("pixel_size_nm", "must be finite and > 0"));
        }
        if let Some(&bad) = pixels.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidPixel(bad));
        }
        Ok(Image {
            width,
            height,
            pixel_size_nm,
            pixels,
        })
    }

    /// A black image. Panics on zero dimensions.
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be non-zero");
        Image {
            width,
            height,
            pixel_size_nm: DEFAULT_PIXEL_SIZE_NM,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(value.is_finite() && value >= 0.0);
        let mut img = Image::zeros(width, height);
        img.pixels.fill(value);
        img
    }

    pub fn with_pixel_size(mut self, pixel_size_nm: f64) -> Self {
        assert!(pixel_size_nm > 0.0 && pixel_size_nm.is_finite());
        self.pixel_size_nm = pixel_size_nm;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_size_nm(&self) -> f64 {
        self.pixel_size_nm
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Adds a non-negative amount to one pixel.
    #[inline]
    pub fn accumulate(&mut self, x: usize, y: usize, amount: f64) {
        debug_assert!(amount >= 0.0);
        self.pixels[y * self.width + x] += amount;
    }

    pub fn sum(&self) -> f64 {
        self.pixels.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.pixels.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.pixels.iter().copied().fold(0.0, f64::max)
    }

    /// Applies `f` to every pixel, clamping the result to be non-negative.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        let pixels = self
            .pixels
            .iter()
            .map(|&v| {
                let out = f(v);
                if out.is_finite() {
                    out.max(0.0)
                } else {
                    0.0
                }
            })
            .collect();
        Image { pixels, ..*self }
    }

    /// Scales the image so its maximum becomes 1. A black image is returned unchanged.
    pub fn normalized(&self) -> Image {
        let peak = self.max();
        if peak > 0.0 {
            self.map(|v| v / peak)
        } else {
            self.clone()
        }
    }

    /// Copies the rectangle `[x, x + w) × [y, y + h)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Image> {
        if w == 0 || h == 0 {
            return Err(Error::EmptyImage);
        }
        if x + w > self.width || y + h > self.height {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                actual: (x + w, y + h),
            });
        }
        let mut pixels = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            pixels.extend_from_slice(&self.pixels[start..start + w]);
        }
        Ok(Image {
            width: w,
            height: h,
            pixel_size_nm: self.pixel_size_nm,
            pixels,
        })
    }

    pub(crate) fn from_raw(width: usize, height: usize, pixel_size_nm: f64, pixels: Vec<f64>) -> Image {
        debug_assert_eq!(pixels.len(), width * height);
        Image {
            width,
            height,
            pixel_size_nm,
            pixels,
        }
    }
}

/// An ordered time series of equally shaped frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    frames: Vec<Image>,
    exposure_ms: f64,
}

impl FrameStack {
    pub fn new(frames: Vec<Image>, exposure_ms: f64) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptyStack)?;
        if !(exposure_ms > 0.0 && exposure_ms.is_finite()) {
            return Err(Error::invalid("exposure_ms", "must be finite and > 0"));
        }
        for frame in &frames[1..] {
            if frame.dims() != first.dims() {
                return Err(Error::DimensionMismatch {
                    expected: first.dims(),
                    actual: frame.dims(),
                });
            }
            if frame.pixel_size_nm != first.pixel_size_nm {
                return Err(Error::invalid("pixel_size_nm", "differs between frames"));
            }
        }
        Ok(FrameStack { frames, exposure_ms })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &Image {
        &self.frames[t]
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn exposure_ms(&self) -> f64 {
        self.exposure_ms
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn pixel_size_nm(&self) -> f64 {
        self.frames[0].pixel_size_nm
    }

    /// Crops every frame to the same rectangle.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<FrameStack> {
        let frames = self
            .frames
            .iter()
            .map(|f| f.crop(x, y, w, h))
            .collect::<Result<Vec<_>>>()?;
        Ok(FrameStack {
            frames,
            exposure_ms: self.exposure_ms,
        })
    }

    pub fn into_frames(self) -> Vec<Image> {
        self.frames
    }
}

/// Block-mean binning by an integer factor.
pub fn downsample(image: &Image, factor: usize) -> Result<Image> {
    if factor == 0 || !image.width.is_multiple_of(factor) || !image.height.is_multiple_of(factor) {
        return Err(Error::NotDivisible {
            width: image.width,
            height: image.height,
            factor,
        });
    }
    if factor == 1 {
        return Ok(image.clone());
    }
    let (w, h) = (image.width / factor, image.height / factor);
    let mut out = vec![0.0; w * h];
    for y in 0..image.height {
        let row = &image.pixels[y * image.width..(y + 1) * image.width];
        let dst = &mut out[(y / factor) * w..(y / factor + 1) * w];
        for (bx, block) in row.chunks_exact(factor).enumerate() {
            dst[bx] += block.iter().sum::<f64>();
        }
    }
    let area = (factor * factor) as f64;
    out.iter_mut().for_each(|v| *v /= area);
    Ok(Image::from_raw(w, h, image.pixel_size_nm * factor as f64, out))
}

/// Adds i.i.d. `N(0, sigma²)` noise to every pixel and clamps at zero.
pub fn add_gaussian_noise<R: Rng + ?Sized>(image: &Image, sigma: f64, rng: &mut R) -> Result<Image> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("noise sigma", "must be finite and >= 0"));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|_| Error::invalid("noise sigma", "rejected"))?;
    let pixels = image
        .pixels
        .iter()
        .map(|&v| (v + normal.sample(rng)).max(0.0))
        .collect();
    Ok(Image { pixels, ..*image })
}

/// Per-pixel mean across all frames.
pub fn temporal_mean(stack: &FrameStack) -> Image {
    let first = &stack.frames[0];
    let mut acc = vec![0.0; first.pixels.len()];
    for frame in &stack.frames {
        for (a, v) in acc.iter_mut().zip(&frame.pixels) {
            *a += v;
        }
    }
    let n = stack.frames.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    Image::from_raw(first.width, first.height, first.pixel_size_nm, acc)
}

/// Keys cubic convolution kernel with `a = -0.5`.
fn cubic_weight(t: f64) -> f64 {
    let t = libm::fabs(t);
    if t <= 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// Bicubic upsampling by an integer factor with edge replication. Negative
/// overshoot is clamped to zero.
pub fn upsample_bicubic(image: &Image, factor: usize) -> Result<Image> {
    if factor == 0 {
        return Err(Error::invalid("upsampling factor", "must be >= 1"));
    }
    if factor == 1 {
        return Ok(image.clone());
    }
    let (w, h) = image.dims();
    let (ow, oh) = (w * factor, h * factor);
    // Sample positions and tap weights are separable; precompute per axis.
    let taps = |len_in: usize, len_out: usize| -> Vec<([usize; 4], [f64; 4])> {
        (0..len_out)
            .map(|o| {
                let src = (o as f64 + 0.5) / factor as f64 - 0.5;
                let base = libm::floor(src);
                let frac = src - base;
                let mut idx = [0usize; 4];
                let mut wts = [0.0; 4];
                for k in 0..4 {
                    let i = base as i64 - 1 + k as i64;
                    idx[k] = i.clamp(0, len_in as i64 - 1) as usize;
                    wts[k] = cubic_weight(frac - (k as f64 - 1.0));
                }
                (idx, wts)
            })
            .collect()
    };
    let xt = taps(w, ow);
    let yt = taps(h, oh);
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &image.pixels[y * w..(y + 1) * w];
        for (x, (idx, wts)) in xt.iter().enumerate() {
            horiz[y * ow + x] = (0..4).map(|k| row[idx[k]] * wts[k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for (y, (idx, wts)) in yt.iter().enumerate() {
        for x in 0..ow {
            let v: f64 = (0..4).map(|k| horiz[idx[k] * ow + x] * wts[k]).sum();
            out[y * ow + x] = v.max(0.0);
        }
    }
    Ok(Image::from_raw(ow, oh, image.pixel_size_nm / factor as f64, out))
}

/// Normalized sampled Gaussian kernel truncated at `4 sigma`.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = libm::ceil(4.0 * sigma).max(1.0) as usize;
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

/// Separable Gaussian blur. Kernel weights that fall outside the image are
/// dropped and the remaining weights renormalized, so constants are preserved.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Result<Image> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("blur sigma", "must be finite and >= 0"));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = kernel.len() / 2;
    let (w, h) = image.dims();
    let blur_line = |src: &dyn Fn(usize) -> f64, len: usize, out: &mut dyn FnMut(usize, f64)| {
        for i in 0..len {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(len - 1);
            let mut acc = 0.0;
            let mut norm = 0.0;
            for j in lo..=hi {
                let wgt = kernel[j + radius - i];
                acc += wgt * src(j);
                norm += wgt;
            }
            out(i, acc / norm);
        }
    };
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &image.pixels[y * w..(y + 1) * w];
        blur_line(&|j| row[j], w, &mut |i, v| tmp[y * w + i] = v);
    }
    let mut out = vec![0.0; w * h];
    for x in 0..w {
        blur_line(&|j| tmp[j * w + x], h, &mut |i, v| out[i * w + x] = v.max(0.0));
    }
    Ok(Image::from_raw(w, h, image.pixel_size_nm, out))
}

/// Lower nearest-rank percentile (`q` in `[0, 1]`) of a slice.
pub(crate) fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = libm::floor(q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64) as usize;
    sorted[idx]
}

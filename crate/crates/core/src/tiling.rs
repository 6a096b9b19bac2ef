//! Splitting a field into overlapped tiles and feathered stitching of the
//! per-tile high-resolution results.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;

/// A tile in low-resolution pixels. `overlap` is the number of columns/rows
/// shared with each neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSpec {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub overlap: usize,
}

fn axis_starts(len: usize, tile: usize, overlap: usize) -> Vec<(usize, usize)> {
    if len <= tile {
        return vec![(0, len)];
    }
    let stride = tile - overlap;
    let count = (len - overlap).div_ceil(stride);
    (0..count)
        .map(|i| {
            let start = i * stride;
            (start, tile.min(len - start))
        })
        .collect()
}

/// Row-major grid of tiles with stride `tile − overlap`. The last tile in a
/// row or column is clipped to the image.
pub fn split_tiles(width: usize, height: usize, tile_w: usize, tile_h: usize, overlap: usize) -> Result<Vec<TileSpec>> {
    if width == 0 || height == 0 {
        return Err(Error::EmptyImage);
    }
    if tile_w == 0 || tile_h == 0 || tile_w > width || tile_h > height {
        return Err(Error::TileGeometry(format!(
            "tile {tile_w}x{tile_h} must be non-empty and fit inside {width}x{height}"
        )));
    }
    if 2 * overlap > tile_w.min(tile_h) {
        return Err(Error::TileGeometry(format!(
            "overlap {overlap} exceeds half of tile {tile_w}x{tile_h}"
        )));
    }
    let cols = axis_starts(width, tile_w, overlap);
    let rows = axis_starts(height, tile_h, overlap);
    let mut tiles = Vec::with_capacity(cols.len() * rows.len());
    for &(y, h) in &rows {
        for &(x, w) in &cols {
            tiles.push(TileSpec { x, y, w, h, overlap });
        }
    }
    Ok(tiles)
}

/// Linear ramp across the shared band on each interior edge.
fn axis_weight(p: usize, start: usize, len: usize, total: usize, overlap: usize, scale: usize) -> f64 {
    if overlap == 0 {
        return 1.0;
    }
    let band = (overlap * scale) as f64;
    let local = (p - start * scale) as f64 + 0.5;
    let mut w: f64 = 1.0;
    if start > 0 {
        w = w.min(local / band);
    }
    if start + len < total {
        w = w.min(((len * scale) as f64 - local) / band);
    }
    w
}

impl TileSpec {
    /// Whether high-resolution pixel `(px, py)` lies in the tile.
    pub fn contains_hr(&self, px: usize, py: usize, scale: usize) -> bool {
        px >= self.x * scale && px < (self.x + self.w) * scale && py >= self.y * scale && py < (self.y + self.h) * scale
    }

    /// Unnormalized feathering weight of high-resolution pixel `(px, py)`
    /// for an image of `width × height` low-resolution pixels.
    pub fn weight(&self, px: usize, py: usize, width: usize, height: usize, scale: usize) -> f64 {
        if !self.contains_hr(px, py, scale) {
            return 0.0;
        }
        axis_weight(px, self.x, self.w, width, self.overlap, scale) * axis_weight(py, self.y, self.h, height, self.overlap, scale)
    }

    /// Whether a point in global high-resolution coordinates belongs to this
    /// tile's share of the field; shared bands are split at their midpoint.
    pub fn owns(&self, x: f64, y: f64, width: usize, height: usize, scale: usize) -> bool {
        let half = self.overlap as f64 / 2.0;
        let span = |start: usize, len: usize, total: usize, v: f64| {
            let lo = if start > 0 { start as f64 + half } else { 0.0 };
            let at_end = start + len >= total;
            let hi = if at_end { total as f64 } else { (start + len) as f64 - half };
            let s = scale as f64;
            v >= lo * s && (v < hi * s || (at_end && v <= hi * s))
        };
        span(self.x, self.w, width, x) && span(self.y, self.h, height, y)
    }
}

/// Sum of the unnormalized weights of all tiles at every high-resolution pixel.
pub fn blend_weight_sum(tiles: &[TileSpec], width: usize, height: usize, scale: usize) -> Vec<f64> {
    let (w, h) = (width * scale, height * scale);
    let mut sum = vec![0.0; w * h];
    for t in tiles {
        for py in t.y * scale..(t.y + t.h) * scale {
            for px in t.x * scale..(t.x + t.w) * scale {
                sum[py * w + px] += t.weight(px, py, width, height, scale);
            }
        }
    }
    sum
}

/// Blends per-tile high-resolution results into one `width·scale × height·scale`
/// image. Inside shared bands tiles are linearly feathered; elsewhere a
/// tile's pixels are copied as is.
pub fn stitch(tiles: &[TileSpec], results: &[Image], width: usize, height: usize, scale: usize) -> Result<Image> {
    if tiles.len() != results.len() || tiles.is_empty() {
        return Err(Error::TileGeometry(format!(
            "{} tiles but {} results",
            tiles.len(),
            results.len()
        )));
    }
    let (w, h) = (width * scale, height * scale);
    let mut acc = vec![0.0; w * h];
    let mut norm = vec![0.0; w * h];
    for (t, img) in tiles.iter().zip(results) {
        let expected = (t.w * scale, t.h * scale);
        if img.dims() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: img.dims(),
            });
        }
        for ly in 0..expected.1 {
            let py = t.y * scale + ly;
            for lx in 0..expected.0 {
                let px = t.x * scale + lx;
                let wgt = t.weight(px, py, width, height, scale);
                acc[py * w + px] += wgt * img.get(lx, ly);
                norm[py * w + px] += wgt;
            }
        }
    }
    if norm.iter().any(|&n| n <= 0.0) {
        return Err(Error::TileGeometry("tiles leave pixels uncovered".into()));
    }
    let pixels = acc.iter().zip(&norm).map(|(a, n)| (a / n).max(0.0)).collect();
    let pixel_size = results[0].pixel_size_nm();
    Image::new(w, h, pixel_size, pixels)
}

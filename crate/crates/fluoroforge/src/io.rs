//! 16-bit PNG images and frame-stack directories.

use std::fs;
use std::path::{Path, PathBuf};

use fluoroforge_core::imaging::{FrameStack, Image, DEFAULT_PIXEL_SIZE_NM};
use fluoroforge_core::metrics::RAW_SCALE;
use fluoroforge_core::photophysics::CalibrationProfile;
use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Loads a 16-bit single-channel PNG, mapping raw values `v` to `v / 65535`.
/// PNGs carry no pixel size, so the default is attached.
pub fn load_image(path: &Path) -> Result<Image> {
    load_image_with_pixel_size(path, DEFAULT_PIXEL_SIZE_NM)
}

pub fn load_image_with_pixel_size(path: &Path, pixel_size_nm: f64) -> Result<Image> {
    let decoded = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    let buffer = match decoded {
        DynamicImage::ImageLuma16(b) => b,
        other => {
            return Err(Error::PixelFormat {
                path: path.to_path_buf(),
                found: format!("{:?}", other.color()),
            })
        }
    };
    let (w, h) = (buffer.width() as usize, buffer.height() as usize);
    let pixels = buffer.into_raw().into_iter().map(|v| f64::from(v) / RAW_SCALE).collect();
    Ok(Image::new(w, h, pixel_size_nm, pixels)?)
}

/// Quantizes `round(clamp(v, 0, 1) · 65535)`.
pub fn quantize(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * RAW_SCALE).round() as u16
}

pub fn save_image(image: &Image, path: &Path) -> Result<()> {
    let raw: Vec<u16> = image.pixels().iter().map(|&v| quantize(v)).collect();
    let buffer: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(image.width() as u32, image.height() as u32, raw).expect("buffer matches dimensions");
    buffer
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Metadata stored next to the frames of a stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackManifest {
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    pub pixel_size_nm: f64,
    pub exposure_ms: f64,
    /// High-resolution pixels per low-resolution pixel.
    pub scale_factor: usize,
    pub rng_seed: Option<u64>,
    /// SHA-256 of the calibration profile the stack was simulated with.
    pub profile_digest: Option<String>,
}

impl StackManifest {
    pub fn describe(stack: &FrameStack, scale_factor: usize) -> Self {
        StackManifest {
            frame_count: stack.frame_count(),
            width: stack.width(),
            height: stack.height(),
            pixel_size_nm: stack.pixel_size_nm(),
            exposure_ms: stack.exposure_ms(),
            scale_factor,
            rng_seed: None,
            profile_digest: None,
        }
    }
}

/// Hex SHA-256 of the profile's canonical JSON encoding.
pub fn profile_digest(profile: &CalibrationProfile) -> String {
    let json = serde_json::to_vec(profile).expect("profile serializes");
    hex::encode(Sha256::digest(json))
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:04}.png")
}

fn is_frame_file(name: &str) -> bool {
    name.strip_prefix("frame_")
        .and_then(|rest| rest.strip_suffix(".png"))
        .is_some_and(|digits| digits.len() >= 4 && digits.bytes().all(|b| b.is_ascii_digit()))
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `manifest.json` and one PNG per frame into `dir`, creating it if needed.
pub fn save_stack(stack: &FrameStack, manifest: &StackManifest, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, frame) in stack.frames().iter().enumerate() {
        save_image(frame, &dir.join(frame_file_name(t)))?;
    }
    write_json(manifest, &dir.join(MANIFEST_FILE))
}

/// Loads a stack directory. The manifest must describe exactly the frames
/// present on disk.
pub fn load_stack(dir: &Path) -> Result<(FrameStack, StackManifest)> {
    let manifest: StackManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = 0;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_name().to_str().is_some_and(is_frame_file) {
            found += 1;
        }
    }
    if found != manifest.frame_count {
        return Err(Error::FrameCountMismatch {
            expected: manifest.frame_count,
            found,
        });
    }
    let mut frames = Vec::with_capacity(found);
    for t in 0..manifest.frame_count {
        let path: PathBuf = dir.join(frame_file_name(t));
        if !path.exists() {
            return Err(Error::FrameCountMismatch {
                expected: manifest.frame_count,
                found: t,
            });
        }
        let frame = load_image_with_pixel_size(&path, manifest.pixel_size_nm)?;
        if frame.dims() != (manifest.width, manifest.height) {
            return Err(Error::FrameShape {
                path,
                expected_w: manifest.width,
                expected_h: manifest.height,
                actual_w: frame.width(),
                actual_h: frame.height(),
            });
        }
        frames.push(frame);
    }
    let stack = FrameStack::new(frames, manifest.exposure_ms)?;
    Ok((stack, manifest))
}

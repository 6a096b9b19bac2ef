use std::path::Path;

use fluoroforge::io::{
    frame_file_name, load_image, load_stack, profile_digest, quantize, save_image, save_stack, StackManifest,
};
use fluoroforge::Error;
use fluoroforge_core::imaging::{FrameStack, Image};
use fluoroforge_core::photophysics::CalibrationProfile;
use image::{ImageBuffer, Luma, Rgb};
use proptest::prelude::*;

fn write_raw16(path: &Path, w: u32, h: u32, raw: Vec<u16>) {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(w, h, raw).unwrap();
    buf.save(path).unwrap();
}

fn read_raw16(path: &Path) -> Vec<u16> {
    image::open(path).unwrap().into_luma16().into_raw()
}

#[test]
fn load_maps_raw_values_onto_unit_scale() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("one.png");
    write_raw16(&p, 1, 1, vec![65535]);
    assert_eq!(load_image(&p).unwrap().pixels(), &[1.0]);
    write_raw16(&p, 1, 1, vec![0]);
    assert_eq!(load_image(&p).unwrap().pixels(), &[0.0]);

    let raw = [0u16, 16384, 32768, 65535];
    write_raw16(&p, 2, 2, raw.to_vec());
    let img = load_image(&p).unwrap();
    assert_eq!(img.dims(), (2, 2));
    for (v, r) in img.pixels().iter().zip(raw) {
        assert!((v - f64::from(r) / 65535.0).abs() < 1e-15);
    }
    assert!((img.pixels()[1] - 0.250_003_814).abs() < 1e-9);
}

#[test]
fn save_rounds_and_clamps() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("out.png");
    let img = Image::new(4, 1, 20.0, vec![1.0, 0.5, 1.7, 0.0]).unwrap();
    save_image(&img, &p).unwrap();
    assert_eq!(read_raw16(&p), vec![65535, 32768, 65535, 0]);
    assert_eq!(quantize(0.5), 32768);
}

#[test]
fn rejects_wrong_pixel_formats_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let p8 = dir.path().join("gray8.png");
    image::GrayImage::from_raw(2, 2, vec![0, 1, 2, 3]).unwrap().save(&p8).unwrap();
    assert!(matches!(load_image(&p8), Err(Error::PixelFormat { .. })));

    let rgb = dir.path().join("rgb16.png");
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_raw(1, 1, vec![1, 2, 3]).unwrap();
    buf.save(&rgb).unwrap();
    assert!(matches!(load_image(&rgb), Err(Error::PixelFormat { .. })));

    let err = load_image(&dir.path().join("absent.png")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert_eq!(err.exit_code(), 3);
}

fn ramp_stack(frames: usize, w: usize, h: usize) -> FrameStack {
    let frames = (0..frames)
        .map(|t| {
            let px = (0..w * h).map(|i| ((i * 37 + t * 11) % 101) as f64 / 100.0).collect();
            Image::new(w, h, 160.0, px).unwrap()
        })
        .collect();
    FrameStack::new(frames, 50.0).unwrap()
}

#[test]
fn stack_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let stack = ramp_stack(3, 5, 4);
    let mut manifest = StackManifest::describe(&stack, 8);
    manifest.rng_seed = Some(7);
    save_stack(&stack, &manifest, dir.path()).unwrap();
    for t in 0..3 {
        assert!(dir.path().join(format!("frame_000{t}.png")).exists());
    }
    let (loaded, m) = load_stack(dir.path()).unwrap();
    assert_eq!(m, manifest);
    assert_eq!(loaded.frame_count(), 3);
    assert_eq!(loaded.pixel_size_nm(), 160.0);
    assert_eq!(loaded.exposure_ms(), 50.0);
    for (a, b) in loaded.frames().iter().zip(stack.frames()) {
        for (x, y) in a.pixels().iter().zip(b.pixels()) {
            assert!((x - y).abs() <= 0.5 / 65535.0 + 1e-15);
        }
    }
}

#[test]
fn manifest_uses_the_documented_keys() {
    let manifest = StackManifest::describe(&ramp_stack(1, 2, 2), 8);
    let value = serde_json::to_value(&manifest).unwrap();
    let mut keys: Vec<&str> = value.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        ["exposure_ms", "frame_count", "height", "pixel_size_nm", "profile_digest", "rng_seed", "scale_factor", "width"]
    );
}

#[test]
fn missing_frame_is_a_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let stack = ramp_stack(4, 3, 3);
    save_stack(&stack, &StackManifest::describe(&stack, 2), dir.path()).unwrap();
    std::fs::remove_file(dir.path().join(frame_file_name(3))).unwrap();
    let err = load_stack(dir.path()).unwrap_err();
    assert!(err.to_string().contains("frame count mismatch"), "{err}");

    // A gap in the numbering is caught too.
    write_raw16(&dir.path().join(frame_file_name(7)), 3, 3, vec![0; 9]);
    let err = load_stack(dir.path()).unwrap_err();
    assert!(err.to_string().contains("frame count mismatch"), "{err}");
}

#[test]
fn missing_manifest_and_mixed_shapes() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_stack(dir.path()), Err(Error::Io { .. })));

    let stack = ramp_stack(2, 3, 3);
    save_stack(&stack, &StackManifest::describe(&stack, 2), dir.path()).unwrap();
    write_raw16(&dir.path().join(frame_file_name(1)), 4, 3, vec![0; 12]);
    let err = load_stack(dir.path()).unwrap_err();
    assert!(matches!(err, Error::FrameShape { .. }));
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn shipped_profile_matches_builtin_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../profiles/meos32.json");
    let text = std::fs::read_to_string(path).unwrap();
    let profile: CalibrationProfile = serde_json::from_str(&text).unwrap();
    assert_eq!(profile, CalibrationProfile::meos32());
    let digest = profile_digest(&profile);
    assert_eq!(digest.len(), 64);
    assert_eq!(digest, profile_digest(&CalibrationProfile::meos32()));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn save_load_error_within_one_step(
        (w, h, px) in (1usize..9, 1usize..9).prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(0.0f64..=1.0, w * h)))
    ) {
        let img = Image::new(w, h, 20.0, px).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        save_image(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        prop_assert_eq!(back.dims(), img.dims());
        for (a, b) in back.pixels().iter().zip(img.pixels()) {
            prop_assert!((a - b).abs() <= 1.0 / 65535.0);
        }
    }
}

//! 1: I/O or parse failure. 2: inputs that do not fit together. 3: numerical failure.

mod common;

use common::*;
use facewarp_cli::formats::landmarks::LandmarkFile;
use facewarp_cli::formats::png::{self, BitDepth};
use facewarp_core::Image;

fn warp_with(image: &str, landmarks: &str, out: &str) -> std::process::Output {
    facewarp([
        "warp",
        "--image",
        image,
        "--landmarks",
        landmarks,
        "--mean",
        p(&fixture("mean.json")),
        "--out",
        out,
    ])
}

#[test]
fn missing_input_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = warp_with(
        "/nonexistent/face.png",
        p(&fixture("face.json")),
        p(&dir.path().join("o.png")),
    );
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nonexistent"));
}

#[test]
fn malformed_landmarks_are_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"width\": 32, \"points\": [[1, 2]]}").unwrap();
    let o = warp_with(p(&fixture("face.png")), p(&bad), p(&dir.path().join("o.png")));
    assert_eq!(code(&o), 1);
}

#[test]
fn truncated_model_is_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let bytes = std::fs::read(fixture("model.mmb")).unwrap();
    let cut = dir.path().join("cut.mmb");
    std::fs::write(&cut, &bytes[..bytes.len() - 2]).unwrap();
    let o = facewarp([
        "fit3d",
        "--landmarks",
        p(&fixture("fit_landmarks.json")),
        "--model",
        p(&cut),
        "--out",
        p(&dir.path().join("f.json")),
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("truncated"));
}

#[test]
fn unknown_config_key_is_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[augment]\nneighbours = 3\n").unwrap();
    assert_eq!(code(&facewarp(["--config", p(&cfg), "config"])), 1);
}

#[test]
fn landmark_frame_mismatch_is_contract_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut lm = LandmarkFile::read(&fixture("face.json")).unwrap();
    lm.width = 64;
    let path = dir.path().join("wide.json");
    lm.write(&path).unwrap();
    let o = warp_with(p(&fixture("face.png")), p(&path), p(&dir.path().join("o.png")));
    assert_eq!(code(&o), 2);
}

#[test]
fn grayscale_photo_is_contract_error() {
    let dir = tempfile::tempdir().unwrap();
    let gray = dir.path().join("gray.png");
    png::write(&gray, &Image::filled(32, 32, 1, 0.5), BitDepth::Eight).unwrap();
    let o = facewarp([
        "adjust",
        "--photo",
        p(&gray),
        "--normalized",
        p(&fixture("reference.png")),
        "--out",
        p(&dir.path().join("o.png")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn degenerate_channel_warns_but_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let black = dir.path().join("black.png");
    png::write(&black, &Image::zeros(32, 32, 3), BitDepth::Eight).unwrap();
    let out = dir.path().join("o.png");
    let o = facewarp([
        "adjust",
        "--photo",
        p(&black),
        "--normalized",
        p(&fixture("reference.png")),
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("Y mean"), "{stderr}");
    // Chroma is mid-range on black and still moves, so only luma is flagged.
    assert!(!stderr.contains("Cr mean") && !stderr.contains("Cb mean"));
    assert!(out.exists());
}

#[test]
fn divergent_fit_is_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut lm = LandmarkFile::read(&fixture("fit_landmarks.json")).unwrap();
    lm.points[0] = [1e300, -1e300];
    let path = dir.path().join("far.json");
    lm.write(&path).unwrap();
    let o = facewarp([
        "fit3d",
        "--landmarks",
        p(&path),
        "--model",
        p(&fixture("model.mmb")),
        "--out",
        p(&dir.path().join("f.json")),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn coincident_landmarks_are_contract_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut lm = LandmarkFile::read(&fixture("face.json")).unwrap();
    lm.points[1] = lm.points[0];
    let path = dir.path().join("dup.json");
    lm.write(&path).unwrap();
    let o = facewarp([
        "warp",
        "--direction",
        "from-mean",
        "--image",
        p(&fixture("face.png")),
        "--landmarks",
        p(&path),
        "--mean",
        p(&fixture("mean.json")),
        "--out",
        p(&dir.path().join("o.png")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("coincides"));
}

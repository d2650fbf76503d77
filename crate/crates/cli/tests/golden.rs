//! Outputs compared against images frozen from the numpy reference in
//! `fixtures/make_fixtures.py`. Pixels must match exactly after 8-bit quantization.

mod common;

use common::*;
use facewarp_cli::formats::{flow, landmarks::LandmarkFile};

fn assert_same_pixels(got: &std::path::Path, golden: &str) {
    let (a, b) = (levels(got), levels(&fixture(golden)));
    assert_eq!(a.len(), b.len(), "{golden}: size differs");
    let diff = a.iter().zip(&b).filter(|(x, y)| x != y).count();
    assert_eq!(diff, 0, "{golden}: {diff} samples differ");
}

#[test]
fn warp_to_mean_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tex.png");
    facewarp_ok([
        "warp",
        "--image",
        p(&fixture("face.png")),
        "--landmarks",
        p(&fixture("face.json")),
        "--mean",
        p(&fixture("mean.json")),
        "--out",
        p(&out),
    ]);
    assert_same_pixels(&out, "warp_to_mean.png");
}

#[test]
fn warp_from_mean_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("face.png");
    facewarp_ok([
        "warp",
        "--direction",
        "from-mean",
        "--image",
        p(&fixture("face.png")),
        "--landmarks",
        p(&fixture("face.json")),
        "--mean",
        p(&fixture("mean.json")),
        "--out",
        p(&out),
    ]);
    assert_same_pixels(&out, "warp_from_mean.png");
}

#[test]
fn identity_warp_is_pixel_exact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("same.png");
    facewarp_ok([
        "warp",
        "--image",
        p(&fixture("face.png")),
        "--landmarks",
        p(&fixture("mean.json")),
        "--mean",
        p(&fixture("mean.json")),
        "--out",
        p(&out),
    ]);
    assert_eq!(levels(&out), levels(&fixture("face.png")));
}

#[test]
fn average_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let (out, lm_out) = (dir.path().join("avg.png"), dir.path().join("avg.json"));
    facewarp_ok([
        "average",
        "--images",
        p(&fixture("face.png")),
        p(&fixture("face2.png")),
        p(&fixture("face3.png")),
        "--landmarks",
        p(&fixture("face.json")),
        p(&fixture("face2.json")),
        p(&fixture("face3.json")),
        "--out",
        p(&out),
        "--landmarks-out",
        p(&lm_out),
    ]);
    assert_same_pixels(&out, "average.png");
    let (got, want) = (
        LandmarkFile::read(&lm_out).unwrap(),
        LandmarkFile::read(&fixture("average.json")).unwrap(),
    );
    for (a, b) in got.points.iter().zip(&want.points) {
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    }
}

#[test]
fn composite_matches_dense_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("comp.png");
    facewarp_ok([
        "composite",
        "--foreground",
        p(&fixture("fg.png")),
        "--background",
        p(&fixture("bg.png")),
        "--mask",
        p(&fixture("mask.png")),
        "--out",
        p(&out),
    ]);
    assert_same_pixels(&out, "composite.png");
}

#[test]
fn adjust_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("adj.png");
    facewarp_ok([
        "adjust",
        "--photo",
        p(&fixture("photo.png")),
        "--normalized",
        p(&fixture("reference.png")),
        "--out",
        p(&out),
    ]);
    assert_same_pixels(&out, "adjusted.png");
}

#[test]
fn flow_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f.flw");
    facewarp_ok([
        "flow",
        "--landmarks",
        p(&fixture("face.json")),
        "--mean",
        p(&fixture("mean.json")),
        "--out",
        p(&out),
    ]);
    let (got, want) = (
        flow::read(&out).unwrap(),
        flow::read(&fixture("flow_to_mean.flw")).unwrap(),
    );
    assert_eq!((got.width(), got.height()), (want.width(), want.height()));
    let worst = got
        .vectors()
        .iter()
        .zip(want.vectors())
        .map(|(a, b)| (*a - *b).norm())
        .fold(0.0, f64::max);
    // Both sides are rounded to f32; the underlying doubles agree to ~1e-14.
    assert!(worst < 1e-6, "flow differs by {worst}");
}

#[test]
fn fit3d_recovers_frozen_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit.json");
    facewarp_ok([
        "fit3d",
        "--landmarks",
        p(&fixture("fit_landmarks.json")),
        "--model",
        p(&fixture("model.mmb")),
        "--lambda",
        "1e-10",
        "--out",
        p(&out),
    ]);
    let fit: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    let truth: serde_json::Value = serde_json::from_slice(&std::fs::read(fixture("fit_truth.json")).unwrap()).unwrap();
    let s: Vec<f64> = serde_json::from_value(fit["s"].clone()).unwrap();
    let t: Vec<f64> = serde_json::from_value(truth["s"].clone()).unwrap();
    let err = s.iter().zip(&t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-5, "shape error {err}");
    assert!(fit["rms_error_px"].as_f64().unwrap() < 1e-3);
    assert_eq!(fit["converged"], true);
}

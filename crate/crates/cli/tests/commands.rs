mod common;

use std::path::Path;

use common::*;
use facewarp_cli::formats::{landmarks::LandmarkFile, mmb};
use facewarp_core::mmfit::{ndc_to_pixel, CameraParams};

fn make_dataset(dir: &Path) {
    for (name, image) in [
        ("face", "face"),
        ("face2", "face2"),
        ("face3", "face3"),
        ("mean", "face"),
    ] {
        std::fs::copy(fixture(&format!("{image}.png")), dir.join(format!("{name}.png"))).unwrap();
        std::fs::copy(fixture(&format!("{name}.json")), dir.join(format!("{name}.json"))).unwrap();
    }
}

fn augment(dataset: &Path, out: &Path, seed: &str, count: &str) -> std::process::Output {
    facewarp([
        "augment",
        "--dataset",
        p(dataset),
        "--count",
        count,
        "--seed",
        seed,
        "--out",
        p(out),
    ])
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (
                path.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&path).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn augment_is_reproducible_per_seed() {
    let root = tempfile::tempdir().unwrap();
    let ds = root.path().join("ds");
    std::fs::create_dir(&ds).unwrap();
    make_dataset(&ds);
    let (a, b, c) = (root.path().join("a"), root.path().join("b"), root.path().join("c"));
    for (out, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let o = augment(&ds, out, seed, "5");
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
    assert_eq!(fa.len(), 11, "5 images, 5 landmark files and the manifest");
    assert_eq!(fa, fb);
    let manifest = |d: &Path| std::fs::read_to_string(d.join("manifest.jsonl")).unwrap();
    assert_ne!(manifest(&a), manifest(&c));

    let names = ["face", "face2", "face3", "mean"];
    for (i, line) in manifest(&a).lines().enumerate() {
        let entry: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(entry["index"], i);
        assert_eq!(entry["image"], format!("morph-{i:06}.png"));
        let seed = entry["seed_id"].as_str().unwrap();
        let neighbor = entry["neighbor_id"].as_str().unwrap();
        assert!(names.contains(&seed) && names.contains(&neighbor) && seed != neighbor);
        for key in ["landmark_weight", "texture_weight"] {
            let w = entry[key].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&w));
        }
    }
}

#[test]
fn augment_zero_count_writes_empty_manifest() {
    let root = tempfile::tempdir().unwrap();
    let ds = root.path().join("ds");
    std::fs::create_dir(&ds).unwrap();
    make_dataset(&ds);
    let out = root.path().join("out");
    assert_eq!(code(&augment(&ds, &out, "1", "0")), 0);
    assert_eq!(std::fs::read(out.join("manifest.jsonl")).unwrap(), b"");
}

#[test]
fn augment_requires_a_seed() {
    let root = tempfile::tempdir().unwrap();
    let o = facewarp([
        "augment",
        "--dataset",
        p(root.path()),
        "--count",
        "1",
        "--out",
        p(root.path()),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
}

#[test]
fn config_reports_defaults() {
    let o = facewarp_ok(["config"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let cfg: toml::Table = text.parse().unwrap();
    assert_eq!(cfg["augment"]["lambda"].as_float(), Some(10.0));
    assert_eq!(cfg["augment"]["neighbors"].as_integer(), Some(200));
    assert_eq!(cfg["fit"]["lambda"].as_float(), Some(1e-3));
    assert_eq!(cfg["voting"]["jitter_count"].as_integer(), Some(16));
}

#[test]
fn config_file_is_merged_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[fit]\nlambda = 1e6\n\n[augment]\nneighbors = 3\n").unwrap();
    let shown = String::from_utf8(facewarp_ok(["--config", p(&cfg), "config"]).stdout).unwrap();
    assert!(shown.contains("neighbors = 3"));
    assert!(shown.contains("lambda = 10.0"), "untouched keys keep their defaults");

    let (landmarks, model) = (fixture("fit_landmarks.json"), fixture("model.mmb"));
    let fit = |extra: &[&str]| -> Vec<f64> {
        let out = dir.path().join("fit.json");
        let mut args = vec![
            "--config",
            p(&cfg),
            "fit3d",
            "--landmarks",
            p(&landmarks),
            "--model",
            p(&model),
            "--out",
            p(&out),
        ];
        args.extend_from_slice(extra);
        facewarp_ok(&args);
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
        serde_json::from_value(v["s"].clone()).unwrap()
    };
    let heavy = fit(&[]);
    assert!(
        heavy.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-3,
        "config lambda = 1e6 shrinks s to zero"
    );
    let light = fit(&["--lambda", "1e-10"]);
    assert!((light[0] - 0.8).abs() < 1e-5, "the flag overrides the file");
}

#[test]
fn fit3d_with_image_reports_vertex_colors() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("photo.png");
    facewarp_cli::formats::png::write(
        &img,
        &facewarp_core::Image::filled(224, 224, 3, 0.4),
        facewarp_cli::formats::png::BitDepth::Eight,
    )
    .unwrap();
    let out = dir.path().join("fit.json");
    facewarp_ok([
        "fit3d",
        "--landmarks",
        p(&fixture("fit_landmarks.json")),
        "--model",
        p(&fixture("model.mmb")),
        "--image",
        p(&img),
        "--confidence",
        "facing-camera",
        "--out",
        p(&out),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    let colors: Vec<f64> = serde_json::from_value(v["texture"]["vertex_colors"].clone()).unwrap();
    let conf: Vec<f64> = serde_json::from_value(v["texture"]["confidence"].clone()).unwrap();
    assert_eq!(colors.len(), 3 * 36);
    assert_eq!(conf.len(), 36);
    assert!(conf.iter().all(|a| (0.0..=1.0).contains(a)));
    assert!(colors.iter().all(|c| c.is_finite()));
}

#[test]
fn correspond_round_trip_through_detection_files() {
    let dir = tempfile::tempdir().unwrap();
    let cams_path = dir.path().join("cams.json");
    let model_path = fixture("model.mmb");
    facewarp_ok([
        "correspond",
        "--model",
        p(&model_path),
        "--seed",
        "3",
        "--emit-cameras",
        p(&cams_path),
    ]);
    let cams: Vec<serde_json::Value> = serde_json::from_slice(&std::fs::read(&cams_path).unwrap()).unwrap();
    assert_eq!(cams.len(), 16);

    // A perfect detector: project the chosen interior vertices of the mean face.
    let truth = [7usize, 14, 21, 28, 15];
    let model = mmb::read(&model_path).unwrap();
    let zero = vec![0.0; model.coeff_count()];
    let det = dir.path().join("det");
    std::fs::create_dir(&det).unwrap();
    for c in &cams {
        let cam: CameraParams = serde_json::from_value(c["camera"].clone()).unwrap();
        let pts: Vec<[f64; 2]> = truth
            .iter()
            .map(|&i| {
                let px = ndc_to_pixel(cam.project(model.vertex(i, &zero), i).unwrap(), 224, 224);
                [px.x, px.y]
            })
            .collect();
        let file = LandmarkFile {
            width: 224,
            height: 224,
            points: pts,
        };
        file.write(&det.join(c["detections"].as_str().unwrap())).unwrap();
    }
    let (out, model_out) = (dir.path().join("idx.json"), dir.path().join("m.mmb"));
    facewarp_ok([
        "correspond",
        "--model",
        p(&model_path),
        "--seed",
        "3",
        "--detections",
        p(&det),
        "--out",
        p(&out),
        "--model-out",
        p(&model_out),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    let got: Vec<usize> = serde_json::from_value(v["landmark_vertices"].clone()).unwrap();
    assert_eq!(got, truth);
    assert_eq!(mmb::read(&model_out).unwrap().landmark_vertices(), truth);
}

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use facewarp_core::composite::{blend, BlendProblem, Mask};
use facewarp_core::mmfit::{fit_shape, project_landmark_vertices, synthetic_face_model, CameraParams, ShapeFitOptions};
use facewarp_core::warp::{build_flow, warp_image};
use facewarp_core::{Displacements, Image, LandmarkSet, Point2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn landmarks(rng: &mut ChaCha8Rng, n: usize) -> (LandmarkSet, Displacements) {
    let pts = (0..n)
        .map(|_| Point2::new(rng.random_range(20.0..204.0), rng.random_range(20.0..204.0)))
        .collect();
    let disp = (0..n)
        .map(|_| Point2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
        .collect();
    (LandmarkSet::new(pts).unwrap(), Displacements::new(disp).unwrap())
}

fn image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    Image::from_fn(w, h, 3, |_, _, _| rng.random::<f64>())
}

fn warp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (lm, disp) = landmarks(&mut rng, 65);
    let img = image(&mut rng, 224, 224);
    c.bench_function("build_flow 224x224 n=65", |b| {
        b.iter(|| build_flow(black_box(&lm), black_box(&disp), 224, 224).unwrap())
    });
    let flow = build_flow(&lm, &disp, 224, 224).unwrap();
    c.bench_function("warp_image 224x224x3", |b| {
        b.iter(|| warp_image(black_box(&img), &flow).unwrap())
    });
}

fn composite(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("blend");
    group.sample_size(10);
    for side in [64, 224] {
        let (fg, bg) = (image(&mut rng, side, side), image(&mut rng, side, side));
        let r = side as f64 / 3.0;
        let mask = Mask::new(Image::from_fn(side, side, 1, |x, y, _| {
            let (dx, dy) = (x as f64 - side as f64 / 2.0, y as f64 - side as f64 / 2.0);
            (1.0 - ((dx * dx + dy * dy).sqrt() - r) / 4.0).clamp(0.0, 1.0)
        }))
        .unwrap();
        let problem = BlendProblem::new(fg, bg, mask);
        group.bench_function(format!("{side}x{side}"), |b| {
            b.iter(|| blend(black_box(&problem)).unwrap())
        });
    }
    group.finish();
}

fn mmfit(c: &mut Criterion) {
    let model = synthetic_face_model(20, 25, 20, 65, 3).unwrap();
    let s: Vec<f64> = (0..20).map(|i| ((i * 7) % 11) as f64 / 10.0 - 0.5).collect();
    let cam = CameraParams {
        translation: [0.05, -0.03, -15.0],
        ..Default::default()
    };
    let targets = project_landmark_vertices(&model, &s, &cam).unwrap();
    let opts = ShapeFitOptions {
        lambda: 1e-3,
        ..Default::default()
    };
    c.bench_function("fit_shape V=500 p=20 n=65", |b| {
        b.iter(|| fit_shape(&model, black_box(&targets), &CameraParams::default(), &opts).unwrap())
    });
}

criterion_group!(benches, warp, composite, mmfit);
criterion_main!(benches);

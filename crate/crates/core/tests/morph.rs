use facewarp_core::morph::*;
use facewarp_core::warp::warp_by_displacements;
use facewarp_core::{Image, LandmarkSet, Point2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const W: usize = 24;
const H: usize = 24;

fn random_face(rng: &mut ChaCha8Rng, id: usize) -> FaceSample {
    let base = [(6.0, 7.0), (17.0, 7.0), (12.0, 12.0), (8.0, 17.0), (16.0, 17.0)];
    let pts: Vec<Point2> = base
        .iter()
        .map(|&(x, y)| Point2::new(x + rng.random_range(-1.5..1.5), y + rng.random_range(-1.5..1.5)))
        .collect();
    let tex = Image::from_fn(W, H, 3, |_, _, _| rng.random());
    FaceSample::new(format!("face{id}"), LandmarkSet::new(pts).unwrap(), tex)
}

fn dataset(n: usize, seed: u64) -> FaceDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FaceDataset::new((0..n).map(|i| random_face(&mut rng, i)).collect()).unwrap()
}

#[test]
fn default_constants() {
    let c = AugmentConfig::default();
    assert_eq!(c.lambda, 10.0);
    assert_eq!(c.neighbors, 200);
    assert_eq!(c.weight_mode, WeightMode::Independent);
}

#[test]
fn hand_computed_distance() {
    let a = FaceSample::new(
        "a",
        LandmarkSet::from_pairs(&[(1.0, 1.0), (5.0, 5.0), (9.0, 1.0)]).unwrap(),
        Image::zeros(4, 4, 1),
    );
    let mut tex = Image::zeros(4, 4, 1);
    tex.set(2, 1, 0, 2.0);
    let b = FaceSample::new(
        "b",
        LandmarkSet::from_pairs(&[(1.0, 1.0), (8.0, 9.0), (9.0, 1.0)]).unwrap(),
        tex,
    );
    assert_eq!(face_distance(&a, &b, 10.0).unwrap(), 52.0);
    assert_eq!(face_distance(&b, &a, 10.0).unwrap(), 52.0);
    assert_eq!(face_distance(&a, &a, 10.0).unwrap(), 0.0);
}

#[test]
fn distance_rejects_mismatched_faces() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random_face(&mut rng, 0);
    let b = FaceSample::new("b", a.landmarks.clone(), Image::zeros(W, H + 1, 3));
    assert!(face_distance(&a, &b, 10.0).is_err());
}

#[test]
fn dataset_mean_is_per_index_average() {
    let ds = dataset(7, 1);
    for i in 0..5 {
        let want = ds.samples().iter().map(|s| s.landmarks[i].x).sum::<f64>() / 7.0;
        assert!((ds.mean().landmarks()[i].x - want).abs() < 1e-12);
    }
}

#[test]
fn nearest_neighbors_are_sorted_and_exclude_the_seed() {
    let ds = dataset(12, 2);
    let all = nearest_neighbors(&ds, 3, 100, DEFAULT_LAMBDA).unwrap();
    assert_eq!(all.len(), 11);
    assert!(!all.contains(&3));
    let d: Vec<f64> = all
        .iter()
        .map(|&i| face_distance(&ds.samples()[3], &ds.samples()[i], DEFAULT_LAMBDA).unwrap())
        .collect();
    assert!(d.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(nearest_neighbors(&ds, 3, 4, DEFAULT_LAMBDA).unwrap(), all[..4]);
    assert!(nearest_neighbors(&ds, 3, 0, DEFAULT_LAMBDA).is_err());
}

#[test]
fn equidistant_neighbours_keep_index_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seed = random_face(&mut rng, 0);
    let twin = |id: &str| FaceSample::new(id, seed.landmarks.clone(), seed.texture.map(|v| v + 0.1));
    let ds = FaceDataset::new(vec![twin("x"), seed.clone(), twin("y"), twin("z")]).unwrap();
    assert_eq!(nearest_neighbors(&ds, 1, 3, 10.0).unwrap(), vec![0, 2, 3]);
}

#[test]
fn morph_endpoints_are_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (a, b) = (random_face(&mut rng, 0), random_face(&mut rng, 1));
    let at_a = morph_pair(&a, &b, 0.0, 0.0).unwrap();
    assert_eq!(at_a.landmarks, a.landmarks);
    assert_eq!(at_a.texture, a.texture);
    let at_b = morph_pair(&a, &b, 1.0, 1.0).unwrap();
    assert_eq!(at_b.landmarks, b.landmarks);
    assert_eq!(at_b.texture, b.texture);
}

#[test]
fn single_image_average_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = random_face(&mut rng, 0);
    let avg = average_identity(std::slice::from_ref(&f.texture), std::slice::from_ref(&f.landmarks)).unwrap();
    assert_eq!(avg.landmarks, f.landmarks);
    assert_eq!(avg.texture, f.texture);
    let copies = average_identity(&vec![f.texture.clone(); 3], &vec![f.landmarks.clone(); 3]).unwrap();
    assert!(copies.texture.max_abs_diff(&f.texture) < 1e-12);
}

#[test]
fn two_offset_images_average_at_the_midpoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let f = random_face(&mut rng, 0);
    let shift = |dx: f64| LandmarkSet::new(f.landmarks.iter().map(|p| Point2::new(p.x + dx, p.y)).collect()).unwrap();
    let (la, lb) = (shift(2.0), shift(-2.0));
    let ia = Image::from_fn(W, H, 1, |x, y, _| (x as f64 * 0.3).sin() + y as f64 * 0.01);
    let ib = Image::from_fn(W, H, 1, |x, y, _| (y as f64 * 0.2).cos() - x as f64 * 0.02);
    let avg = average_identity(&[ia.clone(), ib.clone()], &[la.clone(), lb.clone()]).unwrap();
    for (p, q) in avg.landmarks.iter().zip(f.landmarks.iter()) {
        assert!((*p - *q).norm() < 1e-12);
    }
    // Oracle: warp each image onto the midpoint landmarks and average by hand.
    let wa = warp_by_displacements(&ia, &f.landmarks, &la.displacement_from(&f.landmarks).unwrap()).unwrap();
    let wb = warp_by_displacements(&ib, &f.landmarks, &lb.displacement_from(&f.landmarks).unwrap()).unwrap();
    let expected = Image::from_fn(W, H, 1, |x, y, c| (wa.get(x, y, c) + wb.get(x, y, c)) / 2.0);
    assert!(avg.texture.max_abs_diff(&expected) < 1e-12);
}

#[test]
fn average_rejects_bad_input() {
    assert!(average_identity(&[], &[]).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let f = random_face(&mut rng, 0);
    assert!(average_identity(std::slice::from_ref(&f.texture), &[]).is_err());
}

#[test]
fn augmentation_is_reproducible_and_uses_neighbours() {
    let ds = dataset(8, 8);
    let cfg = AugmentConfig {
        neighbors: 3,
        ..Default::default()
    };
    let a = generate_augmented(&ds, 12, &cfg, 42).unwrap();
    let b = generate_augmented(&ds, 12, &cfg, 42).unwrap();
    assert_eq!(a.len(), 12);
    assert_eq!(a, b);
    let c = generate_augmented(&ds, 12, &cfg, 43).unwrap();
    assert_ne!(
        a.iter().map(|m| m.spec).collect::<Vec<_>>(),
        c.iter().map(|m| m.spec).collect::<Vec<_>>()
    );
    for m in &a {
        let nn = nearest_neighbors(&ds, m.spec.seed_index, 3, cfg.lambda).unwrap();
        assert!(nn.contains(&m.spec.neighbor_index));
        assert_ne!(m.spec.seed_index, m.spec.neighbor_index);
        assert!((0.0..=1.0).contains(&m.spec.landmark_weight));
        assert!((0.0..=1.0).contains(&m.spec.texture_weight));
    }
    assert!(generate_augmented(&ds, 0, &cfg, 42).unwrap().is_empty());
}

#[test]
fn morph_streams_are_independent_of_count() {
    let ds = dataset(6, 9);
    let cfg = AugmentConfig::default();
    let short = generate_augmented(&ds, 3, &cfg, 5).unwrap();
    let long = generate_augmented(&ds, 9, &cfg, 5).unwrap();
    assert_eq!(short[..], long[..3]);
}

#[test]
fn shared_weights_mode() {
    let ds = dataset(5, 10);
    let cfg = AugmentConfig {
        weight_mode: WeightMode::Shared,
        ..Default::default()
    };
    for m in generate_augmented(&ds, 6, &cfg, 1).unwrap() {
        assert_eq!(m.spec.landmark_weight, m.spec.texture_weight);
    }
}

#[test]
fn zero_texture_weight_keeps_the_seed_texture() {
    let ds = dataset(4, 11);
    let spec_free = generate_augmented(&ds, 4, &AugmentConfig::default(), 2).unwrap();
    for m in spec_free {
        let morphed = morph_pair(
            &ds.samples()[m.spec.seed_index],
            &ds.samples()[m.spec.neighbor_index],
            m.spec.landmark_weight,
            m.spec.texture_weight,
        )
        .unwrap();
        assert_eq!(m.sample.landmarks, morphed.landmarks);
    }
    let seed = &ds.samples()[0];
    let rendered = Morph {
        spec: MorphSpec {
            seed_index: 0,
            neighbor_index: 1,
            landmark_weight: 0.0,
            texture_weight: 0.0,
        },
        sample: seed.clone(),
    }
    .render(ds.mean())
    .unwrap();
    assert_eq!(rendered.dims(), seed.texture.dims());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn distance_is_a_pseudometric(seed in 0u64..10_000, lambda in 0.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (random_face(&mut rng, 0), random_face(&mut rng, 1), random_face(&mut rng, 2));
        let d = |x: &FaceSample, y: &FaceSample| face_distance(x, y, lambda).unwrap();
        prop_assert!(d(&a, &b) >= 0.0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
    }

    #[test]
    fn morph_stays_in_parent_envelope(seed in 0u64..10_000, wl in 0.0f64..=1.0, wt in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_face(&mut rng, 0), random_face(&mut rng, 1));
        let m = morph_pair(&a, &b, wl, wt).unwrap();
        for ((v, x), y) in m.texture.samples().iter().zip(a.texture.samples()).zip(b.texture.samples()) {
            prop_assert!(*v >= x.min(*y) - 1e-15 && *v <= x.max(*y) + 1e-15);
        }
    }

    #[test]
    fn average_is_permutation_invariant(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let faces: Vec<FaceSample> = (0..4).map(|i| random_face(&mut rng, i)).collect();
        let imgs: Vec<Image> = faces.iter().map(|f| f.texture.clone()).collect();
        let lms: Vec<LandmarkSet> = faces.iter().map(|f| f.landmarks.clone()).collect();
        let order = [2, 0, 3, 1];
        let pi: Vec<Image> = order.iter().map(|&i| imgs[i].clone()).collect();
        let pl: Vec<LandmarkSet> = order.iter().map(|&i| lms[i].clone()).collect();
        let a = average_identity(&imgs, &lms).unwrap();
        let b = average_identity(&pi, &pl).unwrap();
        prop_assert!(a.texture.max_abs_diff(&b.texture) < 1e-12);
        prop_assert!(a.landmarks.frobenius_distance(&b.landmarks).unwrap() < 1e-12);
    }
}

//! Face distance, nearest neighbours, random morphs and identity averaging.
//!
//! Augmentation works in texture space: two faces are interpolated
//! (landmarks and textures separately), the morphed texture is composited
//! onto the seed's texture inside the mean-landmark hull, and the result is
//! paired with the morphed landmarks. [`Morph::render`] warps it back to image
//! space.
//!
//! # Randomness
//!
//! [`generate_augmented`] uses `ChaCha8Rng::seed_from_u64(seed)` with the
//! stream set to the morph index, so morph `i` depends only on `(seed, i)`
//! and the dataset. Each stream draws, in order: the seed sample, the
//! position in that sample's neighbour list, the landmark weight and (in
//! [`WeightMode::Independent`]) the texture weight.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composite::{
    blend, build_mask, BlendProblem, Mask, DEFAULT_ANCHOR_WEIGHT, DEFAULT_BLUR_SIGMA, DEFAULT_COLOR_WEIGHT,
    DEFAULT_GRADIENT_WEIGHT,
};
use crate::error::{Error, Result};
use crate::geometry::LandmarkSet;
use crate::image::Image;
use crate::warp::{render_from_texture, warp_by_displacements, MeanGeometry};

/// Weight of the landmark term in [`face_distance`].
pub const DEFAULT_LAMBDA: f64 = 10.0;
/// Size of the neighbour pool a morph partner is drawn from.
pub const DEFAULT_NEIGHBORS: usize = 200;

/// A face decomposed into landmarks (image frame) and a texture aligned to the mean geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceSample {
    pub id: String,
    pub landmarks: LandmarkSet,
    pub texture: Image,
}

impl FaceSample {
    pub fn new(id: impl Into<String>, landmarks: LandmarkSet, texture: Image) -> Self {
        Self {
            id: id.into(),
            landmarks,
            texture,
        }
    }

    fn check_compatible(&self, other: &FaceSample) -> Result<()> {
        if self.landmarks.len() != other.landmarks.len() {
            return Err(Error::shape(
                "landmark count",
                self.landmarks.len(),
                other.landmarks.len(),
            ));
        }
        self.texture.check_same_shape(&other.texture, "face texture")
    }
}

/// An immutable set of faces sharing a landmark count and texture frame.
#[derive(Debug, Clone)]
pub struct FaceDataset {
    samples: Vec<FaceSample>,
    mean: MeanGeometry,
}

impl FaceDataset {
    /// Builds the dataset and its mean geometry from the samples' landmarks.
    pub fn new(samples: Vec<FaceSample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("face dataset is empty".into()))?;
        for s in &samples[1..] {
            first.check_compatible(s)?;
        }
        let mean_landmarks = LandmarkSet::mean_of(samples.iter().map(|s| &s.landmarks))?;
        let mean = MeanGeometry::new(mean_landmarks, first.texture.width(), first.texture.height())?;
        Ok(Self { samples, mean })
    }

    pub fn samples(&self) -> &[FaceSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> &MeanGeometry {
        &self.mean
    }

    fn sample(&self, index: usize) -> Result<&FaceSample> {
        self.samples.get(index).ok_or_else(|| {
            Error::InvalidArgument(format!("sample index {index} out of range for {} samples", self.len()))
        })
    }
}

/// The random choices behind one augmented face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MorphSpec {
    pub seed_index: usize,
    pub neighbor_index: usize,
    pub landmark_weight: f64,
    pub texture_weight: f64,
}

/// How landmark and texture interpolation weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Two independent uniform draws.
    #[default]
    Independent,
    /// One draw used for both.
    Shared,
}

/// Compositing parameters used by the augmentation driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompositeConfig {
    pub blur_sigma: f64,
    pub gradient_weight: f64,
    pub color_weight: f64,
    pub anchor_weight: f64,
}

impl Default for CompositeConfig {
    fn default() -> Self {
        Self {
            blur_sigma: DEFAULT_BLUR_SIGMA,
            gradient_weight: DEFAULT_GRADIENT_WEIGHT,
            color_weight: DEFAULT_COLOR_WEIGHT,
            anchor_weight: DEFAULT_ANCHOR_WEIGHT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Neighbour pool size `k`.
    pub neighbors: usize,
    /// Landmark weight `λ` of the face distance.
    pub lambda: f64,
    pub weight_mode: WeightMode,
    pub composite: CompositeConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            neighbors: DEFAULT_NEIGHBORS,
            lambda: DEFAULT_LAMBDA,
            weight_mode: WeightMode::Independent,
            composite: CompositeConfig::default(),
        }
    }
}

/// `λ·‖L_A − L_B‖_F + ‖T_A − T_B‖_F`.
pub fn face_distance(a: &FaceSample, b: &FaceSample, lambda: f64) -> Result<f64> {
    a.check_compatible(b)?;
    Ok(lambda * a.landmarks.frobenius_distance(&b.landmarks)? + a.texture.distance(&b.texture)?)
}

/// Up to `k` samples closest to `seed_index`, nearest first, excluding the
/// seed itself. Equal distances are ordered by index.
pub fn nearest_neighbors(dataset: &FaceDataset, seed_index: usize, k: usize, lambda: f64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("neighbour count k must be at least 1".into()));
    }
    let seed = dataset.sample(seed_index)?;
    let mut scored = dataset
        .samples
        .par_iter()
        .enumerate()
        .filter(|(i, _)| *i != seed_index)
        .map(|(i, s)| face_distance(seed, s, lambda).map(|d| (d, i)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.truncate(k);
    Ok(scored.into_iter().map(|(_, i)| i).collect())
}

fn check_weight(name: &str, w: f64) -> Result<()> {
    if (0.0..=1.0).contains(&w) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {w}")))
    }
}

/// Linear morph of two faces: `wl` moves the landmarks and `wt` the texture
/// from `a` (weight 0) to `b` (weight 1).
pub fn morph_pair(a: &FaceSample, b: &FaceSample, wl: f64, wt: f64) -> Result<FaceSample> {
    check_weight("landmark weight", wl)?;
    check_weight("texture weight", wt)?;
    a.check_compatible(b)?;
    Ok(FaceSample {
        id: format!("{}+{}", a.id, b.id),
        landmarks: a.landmarks.lerp(&b.landmarks, wl)?,
        texture: a.texture.lerp(&b.texture, wt)?,
    })
}

/// Warps every image onto the mean of its landmarks and averages the pixels.
///
/// The result's landmarks are that mean and its texture is the averaged image,
/// in the frame of the input images.
pub fn average_identity(images: &[Image], landmark_sets: &[LandmarkSet]) -> Result<FaceSample> {
    if images.is_empty() {
        return Err(Error::InvalidArgument(
            "identity average needs at least one image".into(),
        ));
    }
    if images.len() != landmark_sets.len() {
        return Err(Error::shape("landmark set count", images.len(), landmark_sets.len()));
    }
    for img in &images[1..] {
        images[0].check_same_shape(img, "identity image")?;
    }
    let mean = LandmarkSet::mean_of(landmark_sets)?;
    let warped = images
        .par_iter()
        .zip(landmark_sets)
        .map(|(img, l)| warp_by_displacements(img, &mean, &l.displacement_from(&mean)?))
        .collect::<Result<Vec<_>>>()?;
    let n = warped.len() as f64;
    let mut acc = vec![0.0; images[0].samples().len()];
    for w in &warped {
        for (a, v) in acc.iter_mut().zip(w.samples()) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    let (w, h, c) = images[0].dims();
    Ok(FaceSample::new("average", mean, Image::from_vec(w, h, c, acc)?))
}

/// One augmented face: its recipe and the composited texture-space sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Morph {
    pub spec: MorphSpec,
    pub sample: FaceSample,
}

impl Morph {
    /// Warps the composited texture onto the morphed landmarks.
    pub fn render(&self, mean: &MeanGeometry) -> Result<Image> {
        render_from_texture(&self.sample.texture, &self.sample.landmarks, mean)
    }
}

/// Draws `count` random morphs from `dataset`, fully determined by `rng_seed`.
pub fn generate_augmented(
    dataset: &FaceDataset,
    count: usize,
    config: &AugmentConfig,
    rng_seed: u64,
) -> Result<Vec<Morph>> {
    if dataset.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "augmentation needs at least 2 samples, dataset has {}",
            dataset.len()
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut streams: Vec<ChaCha8Rng> = (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(i as u64);
            rng
        })
        .collect();
    let seeds: Vec<usize> = streams.iter_mut().map(|r| r.random_range(0..dataset.len())).collect();

    let mut unique: Vec<usize> = seeds.clone();
    unique.sort_unstable();
    unique.dedup();
    let neighbours: BTreeMap<usize, Vec<usize>> = unique
        .into_par_iter()
        .map(|s| nearest_neighbors(dataset, s, config.neighbors, config.lambda).map(|nn| (s, nn)))
        .collect::<Result<_>>()?;

    let specs: Vec<MorphSpec> = streams
        .iter_mut()
        .zip(&seeds)
        .map(|(rng, &seed_index)| {
            let pool = &neighbours[&seed_index];
            let neighbor_index = pool[rng.random_range(0..pool.len())];
            let landmark_weight: f64 = rng.random();
            let texture_weight = match config.weight_mode {
                WeightMode::Independent => rng.random(),
                WeightMode::Shared => landmark_weight,
            };
            MorphSpec {
                seed_index,
                neighbor_index,
                landmark_weight,
                texture_weight,
            }
        })
        .collect();

    let mean = dataset.mean();
    let c = &config.composite;
    let mask = build_mask(mean.landmarks(), mean.width(), mean.height(), c.blur_sigma)?;
    specs
        .into_par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let sample = compose(dataset, &spec, &mask, c)?;
            Ok(Morph {
                spec,
                sample: FaceSample {
                    id: format!("morph-{i:06}"),
                    ..sample
                },
            })
        })
        .collect()
}

fn compose(dataset: &FaceDataset, spec: &MorphSpec, mask: &Mask, c: &CompositeConfig) -> Result<FaceSample> {
    let seed = dataset.sample(spec.seed_index)?;
    let other = dataset.sample(spec.neighbor_index)?;
    let morphed = morph_pair(seed, other, spec.landmark_weight, spec.texture_weight)?;
    let problem = BlendProblem {
        gradient_weight: c.gradient_weight,
        color_weight: c.color_weight,
        anchor_weight: c.anchor_weight,
        ..BlendProblem::new(morphed.texture, seed.texture.clone(), mask.clone())
    };
    Ok(FaceSample {
        texture: blend(&problem)?,
        ..morphed
    })
}

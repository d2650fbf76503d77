//! Landmark-driven image warping and face-geometry toolkit.
//!
//! The crate is organised bottom-up:
//!
//! - [`spline`]: polyharmonic RBF interpolation with exact adjoints.
//! - [`warp`]: dense flow from sparse landmark displacements, bilinear
//!   resampling, texture/shape decomposition and the warp adjoints.
//! - [`morph`]: face distance, nearest neighbours, morphs, identity averaging
//!   and the augmentation driver.
//! - [`composite`]: blending masks and gradient-domain compositing.
//! - [`color`]: face-referenced exposure and white-balance adjustment.
//! - [`mmfit`]: 3-D morphable-model fitting to 2-D landmarks and vertex colors.

#![allow(clippy::needless_range_loop)]

pub mod color;
pub mod composite;
pub mod error;
pub mod geometry;
pub mod image;
pub mod linalg;
pub mod mmfit;
pub mod morph;
pub mod spline;
pub mod warp;

pub use composite::Mask;
pub use error::{Error, ErrorKind, Result};
pub use geometry::{Displacements, LandmarkSet, Point2};
pub use image::Image;
pub use mmfit::{CameraParams, MorphableModel};
pub use morph::{FaceDataset, FaceSample, MorphSpec};
pub use warp::{FlowField, MeanGeometry};

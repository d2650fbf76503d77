//! Optional TOML configuration. Every key has a default; command-line flags
//! override whatever the file sets.

use std::path::Path;

use facewarp_core::mmfit::{
    ConfidenceMode, ShapeFitOptions, VotingOptions, DEFAULT_FAR, DEFAULT_FOV_DEGREES, DEFAULT_NEAR,
};
use facewarp_core::morph::{AugmentConfig, CompositeConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::formats::read_bytes;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub fov_degrees: f64,
    pub near: f64,
    pub far: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fov_degrees: DEFAULT_FOV_DEGREES,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureConfig {
    /// Ridge weight of the color-basis fit.
    pub ridge: f64,
    pub confidence: ConfidenceMode,
    /// Softening of the landmark-hull mask used for vertex confidence.
    pub mask_blur_sigma: f64,
}

impl Default for TextureConfig {
    fn default() -> Self {
        Self {
            ridge: 1e-2,
            confidence: ConfidenceMode::default(),
            mask_blur_sigma: CompositeConfig::default().blur_sigma,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub augment: AugmentConfig,
    pub composite: CompositeConfig,
    pub camera: CameraConfig,
    pub fit: ShapeFitOptions,
    pub texture: TextureConfig,
    pub voting: VotingOptions,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let bytes = read_bytes(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| CliError::parse(path, e))?;
        toml::from_str(text).map_err(|e| CliError::parse(path, e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

use std::path::Path;

use facewarp_core::{LandmarkSet, Point2};
use serde::{Deserialize, Serialize};

use super::{read_bytes, write_bytes};
use crate::error::{CliError, Result};

/// `{"width": w, "height": h, "points": [[x, y], ...]}` in pixel coordinates
/// (pixel centers at integers, y down).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkFile {
    pub width: usize,
    pub height: usize,
    pub points: Vec<[f64; 2]>,
}

impl LandmarkFile {
    pub fn new(width: usize, height: usize, set: &LandmarkSet) -> Self {
        Self {
            width,
            height,
            points: set.iter().map(|p| [p.x, p.y]).collect(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path)?;
        let file: LandmarkFile = serde_json::from_slice(&bytes).map_err(|e| CliError::parse(path, e))?;
        if file.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CliError::parse(path, "non-finite landmark coordinate"));
        }
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string(self).expect("landmarks serialize");
        text.push('\n');
        write_bytes(path, text.as_bytes())
    }

    pub fn landmarks(&self) -> Result<LandmarkSet> {
        Ok(LandmarkSet::new(
            self.points.iter().map(|&p| Point2::from(p)).collect(),
        )?)
    }

    /// Fails unless the file was written for a `width × height` image.
    pub fn check_frame(&self, what: &str, width: usize, height: usize) -> Result<()> {
        if (self.width, self.height) != (width, height) {
            return Err(CliError::Contract(format!(
                "{what} landmarks are for a {}x{} image, but the image is {width}x{height}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

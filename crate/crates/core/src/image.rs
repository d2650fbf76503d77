//! Floating-point raster shared by every module.

use crate::error::{Error, Result};

/// A row-major, channel-interleaved raster of `f64` samples.
///
/// Samples nominally live in `[0, 1]`, but nothing here clamps them: gradients
/// and intermediate blends are allowed to leave that range.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Wraps an existing buffer, checking the sample count and that every sample is finite.
    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if !(1..=4).contains(&channels) {
            return Err(Error::InvalidArgument(format!(
                "image must have 1 to 4 channels, got {channels}"
            )));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::shape("image samples", expected, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image samples"));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// An image filled with `value`.
    ///
    /// # Panics
    ///
    /// If a dimension is zero or `channels` is outside `1..=4`.
    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self::from_vec(width, height, channels, vec![value; width * height * channels])
            .expect("invalid image dimensions")
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    /// Builds an image by evaluating `f(x, y, channel)` at every sample.
    ///
    /// # Panics
    ///
    /// If the dimensions are invalid or `f` returns a non-finite value.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::from_vec(width, height, channels, data).expect("invalid image")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn samples(&self) -> &[f64] {
        &self.data
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        let i = self.index(x, y, c);
        self.data[i] = value;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let start = self.index(x, y, 0);
        &self.data[start..start + self.channels]
    }

    /// Extracts a single channel as a one-channel image.
    pub fn channel(&self, c: usize) -> Image {
        assert!(c < self.channels, "channel {c} out of range");
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Interleaves same-sized single-channel planes into one image.
    pub fn from_channels(planes: &[Image]) -> Result<Image> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidArgument("no channel planes given".into()))?;
        let (w, h) = (first.width, first.height);
        for p in planes {
            if p.channels != 1 || p.width != w || p.height != h {
                return Err(Error::shape(
                    "channel plane",
                    format!("{w}x{h}x1"),
                    format!("{}x{}x{}", p.width, p.height, p.channels),
                ));
            }
        }
        let channels = planes.len();
        let mut data = vec![0.0; w * h * channels];
        for (c, p) in planes.iter().enumerate() {
            for (i, v) in p.data.iter().enumerate() {
                data[i * channels + c] = *v;
            }
        }
        Image::from_vec(w, h, channels, data)
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(what, describe(self), describe(other)))
        }
    }

    /// Elementwise `self * (1 - t) + other * t`.
    pub fn lerp(&self, other: &Image, t: f64) -> Result<Image> {
        self.check_same_shape(other, "image interpolation")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        Ok(self.with_data(data))
    }

    /// Frobenius norm of `self - other` over all samples.
    pub fn distance(&self, other: &Image) -> Result<f64> {
        self.check_same_shape(other, "image distance")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Same dimensions as `self`, new samples. The caller guarantees length and finiteness.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Image {
        debug_assert_eq!(data.len(), self.data.len());
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data,
        }
    }
}

fn describe(img: &Image) -> String {
    format!("{}x{}x{}", img.width, img.height, img.channels)
}

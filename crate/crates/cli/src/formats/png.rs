//! PNG images, 8 or 16 bits per sample, with 1–4 channels (gray, gray+alpha, RGB, RGBA).
//!
//! Samples map to `[0, 1]`; writing clamps and rounds half to even.

use std::path::Path;

use facewarp_core::Image;
use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, LumaA, Rgb, Rgba};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum BitDepth {
    #[default]
    #[value(name = "8")]
    Eight,
    #[value(name = "16")]
    Sixteen,
}

pub fn read(path: &Path) -> Result<Image> {
    let reader = image::ImageReader::open(path).map_err(|e| CliError::io(path, e))?;
    let dynamic = reader
        .with_guessed_format()
        .map_err(|e| CliError::io(path, e))?
        .decode()
        .map_err(|e| CliError::parse(path, e))?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let (channels, data): (usize, Vec<f64>) = match dynamic {
        DynamicImage::ImageLuma8(b) => (1, scale8(b.into_raw())),
        DynamicImage::ImageLumaA8(b) => (2, scale8(b.into_raw())),
        DynamicImage::ImageRgb8(b) => (3, scale8(b.into_raw())),
        DynamicImage::ImageRgba8(b) => (4, scale8(b.into_raw())),
        DynamicImage::ImageLuma16(b) => (1, scale16(b.into_raw())),
        DynamicImage::ImageLumaA16(b) => (2, scale16(b.into_raw())),
        DynamicImage::ImageRgb16(b) => (3, scale16(b.into_raw())),
        DynamicImage::ImageRgba16(b) => (4, scale16(b.into_raw())),
        other => {
            return Err(CliError::parse(
                path,
                format!("unsupported pixel format {:?}", other.color()),
            ))
        }
    };
    Image::from_vec(w, h, channels, data).map_err(|e| CliError::parse(path, e))
}

fn scale8(v: Vec<u8>) -> Vec<f64> {
    v.into_iter().map(|x| f64::from(x) / 255.0).collect()
}

fn scale16(v: Vec<u16>) -> Vec<f64> {
    v.into_iter().map(|x| f64::from(x) / 65535.0).collect()
}

/// `round_half_even(clamp(v, 0, 1) · max)`.
pub fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round_ties_even()
}

fn buffer<P: image::Pixel>(w: u32, h: u32, raw: Vec<P::Subpixel>) -> ImageBuffer<P, Vec<P::Subpixel>> {
    ImageBuffer::from_raw(w, h, raw).expect("buffer length matches dimensions")
}

pub fn to_dynamic(img: &Image, depth: BitDepth) -> DynamicImage {
    let (w, h) = (img.width() as u32, img.height() as u32);
    match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = img.samples().iter().map(|&v| quantize(v, 255.0) as u8).collect();
            match img.channels() {
                1 => buffer::<Luma<u8>>(w, h, raw).into(),
                2 => buffer::<LumaA<u8>>(w, h, raw).into(),
                3 => buffer::<Rgb<u8>>(w, h, raw).into(),
                _ => buffer::<Rgba<u8>>(w, h, raw).into(),
            }
        }
        BitDepth::Sixteen => {
            let raw: Vec<u16> = img.samples().iter().map(|&v| quantize(v, 65535.0) as u16).collect();
            match img.channels() {
                1 => buffer::<Luma<u16>>(w, h, raw).into(),
                2 => buffer::<LumaA<u16>>(w, h, raw).into(),
                3 => buffer::<Rgb<u16>>(w, h, raw).into(),
                _ => buffer::<Rgba<u16>>(w, h, raw).into(),
            }
        }
    }
}

pub fn write(path: &Path, img: &Image, depth: BitDepth) -> Result<()> {
    to_dynamic(img, depth)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => CliError::io(path, io),
            other => CliError::parse(path, other),
        })
}

//! Face-referenced exposure and white-balance adjustment.
//!
//! A photo is adjusted so that the mean color of its central face crop moves
//! to that of a reference (normalized) face, using a per-channel piecewise
//! linear shift in full-range BT.601 YCrCb:
//!
//! ```text
//! r(p) = p · m_N / m_P                      p ≤ m_P
//! r(p) = 1 − (1 − p) · (1 − m_N) / (1 − m_P)  p > m_P
//! ```

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;

const KR: f64 = 0.299;
const KB: f64 = 0.114;
const KG: f64 = 1.0 - KR - KB;

/// Side of the default face crop relative to the image side (100 px of 224).
pub const DEFAULT_CROP_FRACTION: f64 = 100.0 / 224.0;

/// Mean colors within this distance of 0 or 1 make a channel's shift undefined.
pub const DEGENERATE_MEAN_EPS: f64 = 1e-6;

fn check_rgb(img: &Image, what: &'static str) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::shape(what, "3 channels", format!("{} channels", img.channels())));
    }
    Ok(())
}

fn map_pixels(img: &Image, f: impl Fn([f64; 3]) -> [f64; 3] + Sync) -> Image {
    let mut out = img.clone();
    out.samples_mut().par_chunks_mut(3).for_each(|px| {
        let v = f([px[0], px[1], px[2]]);
        px.copy_from_slice(&v);
    });
    out
}

/// Full-range BT.601 with chroma offset by ½ so every channel lies in `[0, 1]`.
pub fn rgb_to_ycrcb_pixel([r, g, b]: [f64; 3]) -> [f64; 3] {
    let y = KR * r + KG * g + KB * b;
    let cr = 0.5 + 0.5 * (r - y) / (1.0 - KR);
    let cb = 0.5 + 0.5 * (b - y) / (1.0 - KB);
    [y, cr, cb]
}

pub fn ycrcb_to_rgb_pixel([y, cr, cb]: [f64; 3]) -> [f64; 3] {
    let r = y + 2.0 * (1.0 - KR) * (cr - 0.5);
    let b = y + 2.0 * (1.0 - KB) * (cb - 0.5);
    let g = (y - KR * r - KB * b) / KG;
    [r, g, b]
}

pub fn rgb_to_ycrcb(img: &Image) -> Result<Image> {
    check_rgb(img, "RGB image")?;
    Ok(map_pixels(img, rgb_to_ycrcb_pixel))
}

pub fn ycrcb_to_rgb(img: &Image) -> Result<Image> {
    check_rgb(img, "YCrCb image")?;
    Ok(map_pixels(img, ycrcb_to_rgb_pixel))
}

/// Pixel rectangle `[x, x + width) × [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl CropBox {
    /// Centered box whose sides are `fraction` of the image sides, rounded to
    /// whole pixels. On odd leftovers the extra pixel goes after the box.
    pub fn centered(img_width: usize, img_height: usize, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "crop fraction must lie in (0, 1], got {fraction}"
            )));
        }
        let side = |n: usize| ((n as f64 * fraction).round() as usize).min(n);
        let (width, height) = (side(img_width), side(img_height));
        Ok(Self {
            x: (img_width - width) / 2,
            y: (img_height - height) / 2,
            width,
            height,
        })
    }

    /// The standard 100-of-224 face crop for an image of the given size.
    pub fn default_for(img_width: usize, img_height: usize) -> Self {
        Self::centered(img_width, img_height, DEFAULT_CROP_FRACTION).expect("default fraction is valid")
    }
}

/// Per-channel mean color of a face crop.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFaceColor(pub Vec<f64>);

/// Per-channel arithmetic mean over `crop`.
pub fn mean_face_color(img: &Image, crop: &CropBox) -> Result<MeanFaceColor> {
    if crop.width == 0 || crop.height == 0 {
        return Err(Error::InvalidArgument("face crop is empty".into()));
    }
    if crop.x + crop.width > img.width() || crop.y + crop.height > img.height() {
        return Err(Error::InvalidArgument(format!(
            "crop {}x{} at ({}, {}) exceeds the {}x{} image",
            crop.width,
            crop.height,
            crop.x,
            crop.y,
            img.width(),
            img.height()
        )));
    }
    let mut sums = vec![0.0; img.channels()];
    for y in crop.y..crop.y + crop.height {
        for x in crop.x..crop.x + crop.width {
            for (s, v) in sums.iter_mut().zip(img.pixel(x, y)) {
                *s += v;
            }
        }
    }
    let n = (crop.width * crop.height) as f64;
    Ok(MeanFaceColor(sums.into_iter().map(|s| s / n).collect()))
}

/// Piecewise-linear map fixing 0 and 1 and sending `m_p` to `m_n`.
pub fn color_shift(p: f64, m_p: f64, m_n: f64) -> f64 {
    if p == m_p {
        m_n
    } else if p < m_p {
        p * (m_n / m_p)
    } else {
        1.0 - (1.0 - p) * ((1.0 - m_n) / (1.0 - m_p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adjustment {
    pub image: Image,
    /// YCrCb channels (0 = Y, 1 = Cr, 2 = Cb) whose photo mean was too close
    /// to 0 or 1 to shift; they were passed through unchanged.
    pub degenerate_channels: Vec<usize>,
    pub photo_mean: MeanFaceColor,
    pub target_mean: MeanFaceColor,
}

/// Shifts `photo`'s colors so its face-crop mean matches `normalized`'s,
/// using the default centered crop of each image.
pub fn adjust(photo: &Image, normalized: &Image) -> Result<Adjustment> {
    adjust_with_crops(
        photo,
        &CropBox::default_for(photo.width(), photo.height()),
        normalized,
        &CropBox::default_for(normalized.width(), normalized.height()),
    )
}

pub fn adjust_with_crops(
    photo: &Image,
    photo_crop: &CropBox,
    normalized: &Image,
    normalized_crop: &CropBox,
) -> Result<Adjustment> {
    let p = rgb_to_ycrcb(photo)?;
    let n = rgb_to_ycrcb(normalized)?;
    let m_p = mean_face_color(&p, photo_crop)?;
    let m_n = mean_face_color(&n, normalized_crop)?;
    let degenerate: Vec<usize> = (0..3)
        .filter(|&c| m_p.0[c] < DEGENERATE_MEAN_EPS || m_p.0[c] > 1.0 - DEGENERATE_MEAN_EPS)
        .collect();
    let (mp, mn) = (m_p.0.clone(), m_n.0.clone());
    let shifted = map_pixels(&p, |px| {
        let mut out = px;
        for c in 0..3 {
            if !degenerate.contains(&c) {
                out[c] = color_shift(px[c], mp[c], mn[c]);
            }
        }
        ycrcb_to_rgb_pixel(out)
    });
    Ok(Adjustment {
        image: shifted.clamp01(),
        degenerate_channels: degenerate,
        photo_mean: m_p,
        target_mean: m_n,
    })
}

//! Dense flow from sparse landmark displacements, bilinear resampling and the
//! texture/shape decomposition built on top of them.
//!
//! Warps are backward: the flow stores, for every destination pixel, the offset
//! of the source sample, so `out[x, y] = img[x + dx(x, y), y + dy(x, y)]`.
//! Pixel centers sit at integer coordinates and samples outside the image clamp
//! to the nearest edge pixel.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{check_len, Displacements, LandmarkSet, Point2};
use crate::image::Image;
use crate::spline::{ControlPoints, RbfOrder, SplineSystem};

/// Anchors placed strictly inside each image edge, in addition to the four corners.
pub const DEFAULT_ANCHORS_PER_EDGE: usize = 3;

/// Per-pixel `(dx, dy)` offsets, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    flow: Vec<Point2>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, flow: Vec<Point2>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "flow dimensions must be positive, got {width}x{height}"
            )));
        }
        check_len("flow vectors", width * height, flow.len())?;
        if flow.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("flow field"));
        }
        Ok(Self { width, height, flow })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, Point2::ZERO)
    }

    pub fn constant(width: usize, height: usize, d: Point2) -> Self {
        Self::new(width, height, vec![d; width * height]).expect("invalid flow dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn vectors(&self) -> &[Point2] {
        &self.flow
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Point2 {
        self.flow[y * self.width + x]
    }

    fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if self.width == width && self.height == height {
            Ok(())
        } else {
            Err(Error::shape(
                "flow field",
                format!("{width}x{height}"),
                format!("{}x{}", self.width, self.height),
            ))
        }
    }
}

/// Canonical face geometry: the dataset's mean landmarks and the texture frame they live in.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanGeometry {
    landmarks: LandmarkSet,
    width: usize,
    height: usize,
}

impl MeanGeometry {
    /// Fails if any landmark lies outside `[0, width − 1] × [0, height − 1]`.
    pub fn new(landmarks: LandmarkSet, width: usize, height: usize) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidArgument(format!(
                "texture frame must be at least 2x2, got {width}x{height}"
            )));
        }
        let (wmax, hmax) = ((width - 1) as f64, (height - 1) as f64);
        if let Some(i) = landmarks
            .iter()
            .position(|p| p.x < 0.0 || p.y < 0.0 || p.x > wmax || p.y > hmax)
        {
            return Err(Error::InvalidArgument(format!(
                "mean landmark {i} at ({}, {}) lies outside the {width}x{height} frame",
                landmarks[i].x, landmarks[i].y
            )));
        }
        Ok(Self {
            landmarks,
            width,
            height,
        })
    }

    pub fn landmarks(&self) -> &LandmarkSet {
        &self.landmarks
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// Zero-displacement points pinning the image border: the four corners, then
/// `per_edge` evenly spaced points strictly inside the top, bottom, left and
/// right edges (in that order).
pub fn boundary_anchors(width: usize, height: usize, per_edge: usize) -> Result<(LandmarkSet, Displacements)> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot anchor a zero-sized image ({width}x{height})"
        )));
    }
    if width < 2 || height < 2 {
        return Err(Error::InvalidArgument(format!(
            "boundary anchors need at least a 2x2 frame, got {width}x{height}"
        )));
    }
    if per_edge == 0 {
        return Err(Error::InvalidArgument("per_edge must be at least 1".into()));
    }
    let (r, b) = ((width - 1) as f64, (height - 1) as f64);
    let mut pts = vec![
        Point2::new(0.0, 0.0),
        Point2::new(r, 0.0),
        Point2::new(0.0, b),
        Point2::new(r, b),
    ];
    let step = |len: f64, j: usize| len * j as f64 / (per_edge + 1) as f64;
    pts.extend((1..=per_edge).map(|j| Point2::new(step(r, j), 0.0)));
    pts.extend((1..=per_edge).map(|j| Point2::new(step(r, j), b)));
    pts.extend((1..=per_edge).map(|j| Point2::new(0.0, step(b, j))));
    pts.extend((1..=per_edge).map(|j| Point2::new(r, step(b, j))));
    let n = pts.len();
    Ok((LandmarkSet::new(pts)?, Displacements::zeros(n)))
}

/// The two displacement splines for a fixed set of landmarks plus boundary anchors.
///
/// Factoring once lets the forward warp and its adjoint share the solve.
#[derive(Debug, Clone)]
pub struct FlowSystem {
    system: SplineSystem,
    landmark_count: usize,
    width: usize,
    height: usize,
}

impl FlowSystem {
    pub fn new(control: &LandmarkSet, width: usize, height: usize) -> Result<Self> {
        Self::with_anchors(control, width, height, DEFAULT_ANCHORS_PER_EDGE)
    }

    pub fn with_anchors(control: &LandmarkSet, width: usize, height: usize, per_edge: usize) -> Result<Self> {
        let (anchors, _) = boundary_anchors(width, height, per_edge)?;
        let n = control.len();
        let mut pts: Vec<Point2> = control.points().to_vec();
        pts.extend_from_slice(anchors.points());
        let cp = ControlPoints::new(pts).map_err(|e| match e {
            Error::DuplicatePoints { first, second, x, y } => {
                let name = |i: usize| {
                    if i < n {
                        format!("landmark {i}")
                    } else {
                        format!("boundary anchor {}", i - n)
                    }
                };
                Error::InvalidArgument(format!("{} coincides with {} at ({x}, {y})", name(first), name(second)))
            }
            other => other,
        })?;
        Ok(Self {
            system: SplineSystem::new(cp, RbfOrder::Linear)?,
            landmark_count: n,
            width,
            height,
        })
    }

    pub fn landmark_count(&self) -> usize {
        self.landmark_count
    }

    fn values(&self, disp: &Displacements) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("displacements", self.landmark_count, disp.len())?;
        let total = self.system.control().len();
        let mut dx = vec![0.0; total];
        let mut dy = vec![0.0; total];
        for (i, d) in disp.iter().enumerate() {
            dx[i] = d.x;
            dy[i] = d.y;
        }
        Ok((dx, dy))
    }

    /// Evaluates both splines at every pixel center.
    pub fn flow(&self, disp: &Displacements) -> Result<FlowField> {
        let (dx, dy) = self.values(disp)?;
        let sx = self.system.fit(&dx)?;
        let sy = self.system.fit(&dy)?;
        let w = self.width;
        let flow: Vec<Point2> = (0..self.width * self.height)
            .into_par_iter()
            .map(|i| {
                let q = Point2::new((i % w) as f64, (i / w) as f64);
                Point2::new(sx.eval(q), sy.eval(q))
            })
            .collect();
        FlowField::new(self.width, self.height, flow)
    }

    /// Pulls a flow-field cotangent back to the landmark displacements.
    pub fn flow_vjp(&self, grad_flow: &FlowField) -> Result<Displacements> {
        grad_flow.check_dims(self.width, self.height)?;
        let queries = pixel_centers(self.width, self.height);
        let gx: Vec<f64> = grad_flow.flow.iter().map(|p| p.x).collect();
        let gy: Vec<f64> = grad_flow.flow.iter().map(|p| p.y).collect();
        let vx = self.system.vjp(&queries, &gx)?;
        let vy = self.system.vjp(&queries, &gy)?;
        // Anchor values are fixed at zero, so only the landmark entries carry gradient.
        Displacements::new((0..self.landmark_count).map(|i| Point2::new(vx[i], vy[i])).collect())
    }
}

fn pixel_centers(width: usize, height: usize) -> Vec<Point2> {
    (0..width * height)
        .map(|i| Point2::new((i % width) as f64, (i / width) as f64))
        .collect()
}

/// Dense flow from landmark displacements, pinned to zero on the image border.
pub fn build_flow(control: &LandmarkSet, disp: &Displacements, width: usize, height: usize) -> Result<FlowField> {
    check_len("displacements", control.len(), disp.len())?;
    FlowSystem::new(control, width, height)?.flow(disp)
}

/// One axis of a clamped bilinear lookup.
#[derive(Debug, Clone, Copy)]
struct Axis {
    i0: usize,
    i1: usize,
    frac: f64,
    /// False where the coordinate was clamped, so it has no gradient.
    active: bool,
}

#[inline]
fn axis(coord: f64, len: usize) -> Axis {
    if len == 1 {
        return Axis {
            i0: 0,
            i1: 0,
            frac: 0.0,
            active: false,
        };
    }
    let last = (len - 1) as f64;
    if coord < 0.0 {
        Axis {
            i0: 0,
            i1: 1,
            frac: 0.0,
            active: false,
        }
    } else if coord > last {
        Axis {
            i0: len - 2,
            i1: len - 1,
            frac: 1.0,
            active: false,
        }
    } else {
        // The upper edge uses the last cell with frac = 1 so lattice samples stay exact.
        let i0 = (coord.floor() as usize).min(len - 2);
        Axis {
            i0,
            i1: i0 + 1,
            frac: coord - i0 as f64,
            active: true,
        }
    }
}

#[inline]
fn lerp_sample(img: &Image, ax: Axis, ay: Axis, c: usize) -> f64 {
    let top = img.get(ax.i0, ay.i0, c) * (1.0 - ax.frac) + img.get(ax.i1, ay.i0, c) * ax.frac;
    let bottom = img.get(ax.i0, ay.i1, c) * (1.0 - ax.frac) + img.get(ax.i1, ay.i1, c) * ax.frac;
    top * (1.0 - ay.frac) + bottom * ay.frac
}

/// Bilinear sample at a continuous position, one value per channel.
pub fn sample_bilinear(img: &Image, x: f64, y: f64) -> Result<Vec<f64>> {
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::NonFinite("sample coordinates"));
    }
    let (ax, ay) = (axis(x, img.width()), axis(y, img.height()));
    Ok((0..img.channels()).map(|c| lerp_sample(img, ax, ay, c)).collect())
}

/// Backward warp of `img` by `flow`; the output has the flow's dimensions.
fn resample(img: &Image, flow: &FlowField) -> Image {
    let ch = img.channels();
    let w = flow.width;
    let mut out = vec![0.0; flow.width * flow.height * ch];
    out.par_chunks_mut(w * ch).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let d = flow.get(x, y);
            let ax = axis(x as f64 + d.x, img.width());
            let ay = axis(y as f64 + d.y, img.height());
            for c in 0..ch {
                row[x * ch + c] = lerp_sample(img, ax, ay, c);
            }
        }
    });
    Image::from_vec(flow.width, flow.height, ch, out).expect("resample keeps samples finite")
}

/// `out[x, y] = sample_bilinear(img, x + dx, y + dy)`.
pub fn warp_image(img: &Image, flow: &FlowField) -> Result<Image> {
    flow.check_dims(img.width(), img.height())?;
    Ok(resample(img, flow))
}

/// Adjoints of [`warp_image`] with respect to the source image and the flow.
///
/// The flow gradient is piecewise: on a lattice coordinate it takes the
/// one-sided difference of the cell to the right (left on the last row or
/// column), and it is zero wherever the sample position was clamped.
pub fn warp_vjp(img: &Image, flow: &FlowField, cotangent: &Image) -> Result<(Image, FlowField)> {
    flow.check_dims(img.width(), img.height())?;
    img.check_same_shape(cotangent, "warp cotangent")?;
    let ch = img.channels();
    let (w, h) = (img.width(), img.height());

    let grad_flow: Vec<Point2> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let d = flow.get(x, y);
            let ax = axis(x as f64 + d.x, w);
            let ay = axis(y as f64 + d.y, h);
            let mut g = Point2::ZERO;
            for c in 0..ch {
                let cot = cotangent.get(x, y, c);
                if cot == 0.0 {
                    continue;
                }
                let (v00, v10) = (img.get(ax.i0, ay.i0, c), img.get(ax.i1, ay.i0, c));
                let (v01, v11) = (img.get(ax.i0, ay.i1, c), img.get(ax.i1, ay.i1, c));
                if ax.active {
                    g.x += cot * ((v10 - v00) * (1.0 - ay.frac) + (v11 - v01) * ay.frac);
                }
                if ay.active {
                    let top = v00 * (1.0 - ax.frac) + v10 * ax.frac;
                    let bottom = v01 * (1.0 - ax.frac) + v11 * ax.frac;
                    g.y += cot * (bottom - top);
                }
            }
            g
        })
        .collect();

    // Scatter in a fixed serial order so rounding does not depend on scheduling.
    let mut grad_img = Image::zeros(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            let d = flow.get(x, y);
            let ax = axis(x as f64 + d.x, w);
            let ay = axis(y as f64 + d.y, h);
            let corners = [
                (ax.i0, ay.i0, (1.0 - ax.frac) * (1.0 - ay.frac)),
                (ax.i1, ay.i0, ax.frac * (1.0 - ay.frac)),
                (ax.i0, ay.i1, (1.0 - ax.frac) * ay.frac),
                (ax.i1, ay.i1, ax.frac * ay.frac),
            ];
            for c in 0..ch {
                let cot = cotangent.get(x, y, c);
                if cot == 0.0 {
                    continue;
                }
                for &(sx, sy, wgt) in &corners {
                    if wgt != 0.0 {
                        let idx = grad_img.index(sx, sy, c);
                        grad_img.samples_mut()[idx] += cot * wgt;
                    }
                }
            }
        }
    }
    Ok((grad_img, FlowField::new(w, h, grad_flow)?))
}

/// [`build_flow`] followed by [`warp_image`].
pub fn warp_by_displacements(img: &Image, control: &LandmarkSet, disp: &Displacements) -> Result<Image> {
    check_len("displacements", control.len(), disp.len())?;
    let flow = build_flow(control, disp, img.width(), img.height())?;
    warp_image(img, &flow)
}

/// Gradients of `⟨cotangent, warp_by_displacements(img, control, disp)⟩` with
/// respect to the image and the displacements.
pub fn warp_by_displacements_vjp(
    img: &Image,
    control: &LandmarkSet,
    disp: &Displacements,
    cotangent: &Image,
) -> Result<(Image, Displacements)> {
    check_len("displacements", control.len(), disp.len())?;
    let system = FlowSystem::new(control, img.width(), img.height())?;
    let flow = system.flow(disp)?;
    let (grad_img, grad_flow) = warp_vjp(img, &flow, cotangent)?;
    Ok((grad_img, system.flow_vjp(&grad_flow)?))
}

/// Warps a face image into the canonical texture frame, so that texture
/// position `mean[i]` samples the image at `landmarks[i]`.
///
/// The source image may differ in size from the texture frame.
pub fn decompose_to_texture(img: &Image, landmarks: &LandmarkSet, mean: &MeanGeometry) -> Result<Image> {
    let disp = landmarks.displacement_from(&mean.landmarks)?;
    let flow = build_flow(&mean.landmarks, &disp, mean.width, mean.height)?;
    Ok(resample(img, &flow))
}

/// Inverse role of [`decompose_to_texture`]: moves texture content from the
/// mean landmarks back onto `landmarks`. The output has the texture's size.
pub fn render_from_texture(tex: &Image, landmarks: &LandmarkSet, mean: &MeanGeometry) -> Result<Image> {
    let disp = mean.landmarks.displacement_from(landmarks)?;
    let flow = build_flow(landmarks, &disp, tex.width(), tex.height())?;
    Ok(resample(tex, &flow))
}

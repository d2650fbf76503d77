//! Blending masks and gradient-domain compositing of a face texture onto a background.
//!
//! For each channel the output `T_o` is the least-squares solution of three
//! families of soft constraints over the pixel grid:
//!
//! ```text
//! gradient_weight · (∂T_o − (∂T_f ∘ M + ∂T_b ∘ (1 − M)))      for ∂ ∈ {∂x, ∂y}
//! color_weight · M ∘ (T_o − T_f)
//! anchor_weight · (mean(T_o) − mean(T_b))
//! ```
//!
//! Derivatives are forward differences with replicated edges, so the last
//! column (row) has a zero x (y) difference and contributes no gradient row.
//! The anchor removes the constant null space of the gradient rows when the
//! mask vanishes.
//!
//! The system is solved for `δ = T_o − T_b`, which makes the all-background
//! case exact and the result invariant to a common offset of both inputs.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{convex_hull, LandmarkSet, Point2};
use crate::image::Image;
use crate::linalg::{conjugate_gradient, SquareMatrix};

/// Default Gaussian softening of the hull mask, in pixels.
pub const DEFAULT_BLUR_SIGMA: f64 = 5.0;
pub const DEFAULT_GRADIENT_WEIGHT: f64 = 1.0;
pub const DEFAULT_COLOR_WEIGHT: f64 = 1.0;
pub const DEFAULT_ANCHOR_WEIGHT: f64 = 1e-3;
/// Relative residual of the normal equations at which CG stops.
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// A single-channel weight raster with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask(Image);

impl Mask {
    /// Takes a one-channel image, clamping samples into `[0, 1]`.
    pub fn new(img: Image) -> Result<Self> {
        if img.channels() != 1 {
            return Err(Error::shape("mask channels", 1, img.channels()));
        }
        Ok(Self(img.clamp01()))
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self(Image::filled(width, height, 1, value.clamp(0.0, 1.0)))
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y, 0)
    }

    pub fn as_image(&self) -> &Image {
        &self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }
}

/// Where a point falls relative to a convex polygon.
fn hull_coverage(hull: &[Point2], p: Point2) -> f64 {
    let mut on_edge = false;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let e = b - a;
        let cross = e.x * (p.y - a.y) - e.y * (p.x - a.x);
        let tol = 1e-9 * e.norm();
        if cross < -tol {
            return 0.0;
        }
        if cross <= tol {
            on_edge = true;
        }
    }
    if on_edge {
        0.5
    } else {
        1.0
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable normalized Gaussian blur of a one-channel image with replicated edges.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if img.channels() != 1 {
        return Err(Error::shape("blur channels", 1, img.channels()));
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "blur sigma must be a nonnegative number, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (w, h) = (img.width(), img.height());
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let off = k as i64 - radius;
                    let (sx, sy) = if horizontal {
                        ((x as i64 + off).clamp(0, w as i64 - 1) as usize, y)
                    } else {
                        (x, (y as i64 + off).clamp(0, h as i64 - 1) as usize)
                    };
                    acc += kv * src[sy * w + sx];
                }
                *o = acc;
            }
        });
        out
    };
    let tmp = pass(img.samples(), true);
    Image::from_vec(w, h, 1, pass(&tmp, false))
}

/// Rasterizes the convex hull of `landmarks` (1 inside, 0 outside, ½ on the
/// hull boundary) and softens it with a Gaussian of standard deviation `blur_sigma`.
pub fn build_mask(landmarks: &LandmarkSet, width: usize, height: usize, blur_sigma: f64) -> Result<Mask> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "mask dimensions must be positive, got {width}x{height}"
        )));
    }
    let hull = convex_hull(landmarks.points());
    if hull.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "landmark hull is degenerate ({} distinct non-collinear vertices)",
            hull.len()
        )));
    }
    let raster = Image::from_fn(width, height, 1, |x, y, _| {
        hull_coverage(&hull, Point2::new(x as f64, y as f64))
    });
    Mask::new(gaussian_blur(&raster, blur_sigma)?)
}

/// Inputs of a gradient-domain blend.
#[derive(Debug, Clone)]
pub struct BlendProblem {
    pub foreground: Image,
    pub background: Image,
    pub mask: Mask,
    pub gradient_weight: f64,
    pub color_weight: f64,
    pub anchor_weight: f64,
}

impl BlendProblem {
    /// A problem with the default weights.
    pub fn new(foreground: Image, background: Image, mask: Mask) -> Self {
        Self {
            foreground,
            background,
            mask,
            gradient_weight: DEFAULT_GRADIENT_WEIGHT,
            color_weight: DEFAULT_COLOR_WEIGHT,
            anchor_weight: DEFAULT_ANCHOR_WEIGHT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.foreground.check_same_shape(&self.background, "blend background")?;
        let (w, h) = (self.foreground.width(), self.foreground.height());
        if self.mask.width() != w || self.mask.height() != h {
            return Err(Error::shape(
                "blend mask",
                format!("{w}x{h}"),
                format!("{}x{}", self.mask.width(), self.mask.height()),
            ));
        }
        for (name, v) in [
            ("gradient_weight", self.gradient_weight),
            ("color_weight", self.color_weight),
            ("anchor_weight", self.anchor_weight),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// How the blend normal equations are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlendSolver {
    /// Matrix-free conjugate gradient.
    #[default]
    ConjugateGradient,
    /// Dense LU on the assembled normal matrix. Only sensible for small images.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendOptions {
    pub solver: BlendSolver,
    pub tolerance: f64,
    /// `None` means ten times the pixel count.
    pub max_iterations: Option<usize>,
}

impl Default for BlendOptions {
    fn default() -> Self {
        Self {
            solver: BlendSolver::ConjugateGradient,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: None,
        }
    }
}

/// Normal-equation operator for one channel, in terms of `δ = T_o − T_b`.
struct ChannelSystem {
    w: usize,
    h: usize,
    gw2: f64,
    /// `(color_weight · M)²` per pixel.
    color2: Vec<f64>,
    /// `anchor_weight² / N²`.
    anchor2: f64,
}

impl ChannelSystem {
    /// `out = A v`.
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let (w, h) = (self.w, self.h);
        let mean_term = self.anchor2 * v.iter().sum::<f64>();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                // Dᵀ D v for forward differences, i.e. a Neumann Laplacian (negated).
                let mut lap = 0.0;
                if x + 1 < w {
                    lap += v[i] - v[i + 1];
                }
                if x > 0 {
                    lap += v[i] - v[i - 1];
                }
                if y + 1 < h {
                    lap += v[i] - v[i + w];
                }
                if y > 0 {
                    lap += v[i] - v[i - w];
                }
                out[i] = self.gw2 * lap + self.color2[i] * v[i] + mean_term;
            }
        }
    }

    fn assemble(&self) -> SquareMatrix {
        let n = self.w * self.h;
        let mut a = SquareMatrix::zeros(n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            for (i, v) in col.iter().enumerate() {
                a.set(i, j, *v);
            }
            e[j] = 0.0;
        }
        a
    }
}

fn solve_channel(problem: &BlendProblem, c: usize, opts: &BlendOptions) -> Result<Vec<f64>> {
    let fg = &problem.foreground;
    let bg = &problem.background;
    let (w, h) = (fg.width(), fg.height());
    let n = w * h;
    let m = |x: usize, y: usize| problem.mask.value(x, y);
    // Difference image T_f − T_b drives every right-hand side term.
    let diff: Vec<f64> = (0..n)
        .map(|i| fg.get(i % w, i / w, c) - bg.get(i % w, i / w, c))
        .collect();
    let gw2 = problem.gradient_weight * problem.gradient_weight;
    let cw = problem.color_weight;

    let mut rhs = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mi = m(x, y);
            // Target for ∂δ at i is M_i · ∂(T_f − T_b)_i; Dᵀ scatters it to i and its forward neighbour.
            if x + 1 < w {
                let g = mi * (diff[i + 1] - diff[i]);
                rhs[i + 1] += gw2 * g;
                rhs[i] -= gw2 * g;
            }
            if y + 1 < h {
                let g = mi * (diff[i + w] - diff[i]);
                rhs[i + w] += gw2 * g;
                rhs[i] -= gw2 * g;
            }
            rhs[i] += (cw * mi).powi(2) * diff[i];
        }
    }
    let system = ChannelSystem {
        w,
        h,
        gw2,
        color2: (0..n).map(|i| (cw * m(i % w, i / w)).powi(2)).collect(),
        anchor2: (problem.anchor_weight / n as f64).powi(2),
    };
    let delta = match opts.solver {
        BlendSolver::Direct => system.assemble().lu()?.solve(&rhs),
        BlendSolver::ConjugateGradient => {
            let mut x = vec![0.0; n];
            conjugate_gradient(
                |v, out| system.apply(v, out),
                &rhs,
                &mut x,
                opts.tolerance,
                opts.max_iterations.unwrap_or(10 * n),
            )?;
            x
        }
    };
    Ok(delta
        .iter()
        .enumerate()
        .map(|(i, d)| bg.get(i % w, i / w, c) + d)
        .collect())
}

/// Gradient-domain blend with default solver options.
pub fn blend(problem: &BlendProblem) -> Result<Image> {
    blend_with(problem, &BlendOptions::default())
}

/// Gradient-domain blend; channels are solved independently (and in parallel).
pub fn blend_with(problem: &BlendProblem, opts: &BlendOptions) -> Result<Image> {
    problem.validate()?;
    let fg = &problem.foreground;
    let planes: Vec<Vec<f64>> = (0..fg.channels())
        .into_par_iter()
        .map(|c| solve_channel(problem, c, opts))
        .collect::<Result<_>>()?;
    let ch = fg.channels();
    let mut data = vec![0.0; fg.samples().len()];
    for (c, plane) in planes.iter().enumerate() {
        for (i, v) in plane.iter().enumerate() {
            data[i * ch + c] = *v;
        }
    }
    Image::from_vec(fg.width(), fg.height(), ch, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn textured(w: usize, h: usize, phase: f64) -> Image {
        Image::from_fn(w, h, 2, |x, y, c| {
            0.5 + 0.3 * ((x as f64 * 0.7 + phase + c as f64).sin() * (y as f64 * 0.4).cos())
        })
    }

    #[test]
    fn full_mask_returns_foreground() {
        let (fg, bg) = (textured(7, 5, 0.0), textured(7, 5, 2.0));
        let out = blend(&BlendProblem::new(fg.clone(), bg, Mask::constant(7, 5, 1.0))).unwrap();
        assert!(out.max_abs_diff(&fg) < 1e-6);
    }

    #[test]
    fn empty_mask_returns_background() {
        let (fg, bg) = (textured(7, 5, 0.0), textured(7, 5, 2.0));
        let out = blend(&BlendProblem::new(fg, bg.clone(), Mask::constant(7, 5, 0.0))).unwrap();
        assert!(out.max_abs_diff(&bg) < 1e-6);
    }

    #[test]
    fn direct_and_cg_agree() {
        let (fg, bg) = (textured(6, 6, 0.3), textured(6, 6, 1.9));
        let mask = Mask::new(Image::from_fn(6, 6, 1, |x, y, _| ((x + y) as f64 / 10.0).min(1.0))).unwrap();
        let p = BlendProblem::new(fg, bg, mask);
        let cg = blend(&p).unwrap();
        let direct = blend_with(
            &p,
            &BlendOptions {
                solver: BlendSolver::Direct,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(cg.max_abs_diff(&direct) < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let fg = textured(4, 4, 0.0);
        let bg = textured(5, 4, 0.0);
        let p = BlendProblem::new(fg.clone(), bg, Mask::constant(4, 4, 1.0));
        assert!(matches!(blend(&p), Err(Error::ShapeMismatch { .. })));
        let mut p = BlendProblem::new(fg.clone(), fg, Mask::constant(4, 4, 1.0));
        p.anchor_weight = 0.0;
        assert!(matches!(blend(&p), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn iteration_cap_is_reported() {
        let (fg, bg) = (textured(8, 8, 0.0), textured(8, 8, 2.0));
        let mask = Mask::new(Image::from_fn(8, 8, 1, |x, _, _| x as f64 / 7.0)).unwrap();
        let opts = BlendOptions {
            max_iterations: Some(1),
            tolerance: 1e-14,
            ..Default::default()
        };
        let err = blend_with(&BlendProblem::new(fg, bg, mask), &opts).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { .. }));
    }

    #[test]
    fn mask_rejects_degenerate_hull() {
        let line = LandmarkSet::from_pairs(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]).unwrap();
        assert!(build_mask(&line, 8, 8, 1.0).is_err());
    }

    #[test]
    fn mask_values() {
        let square = LandmarkSet::from_pairs(&[(10.0, 10.0), (50.0, 10.0), (50.0, 50.0), (10.0, 50.0)]).unwrap();
        let sigma = 2.0;
        let m = build_mask(&square, 61, 61, sigma).unwrap();
        assert_abs_diff_eq!(m.value(30, 30), 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(m.value(2, 30), 0.0, epsilon = 1e-4);
        assert_abs_diff_eq!(m.value(10, 30), 0.5, epsilon = 0.02);
        let sharp = build_mask(&square, 61, 61, 0.0).unwrap();
        assert_eq!(sharp.value(30, 30), 1.0);
        assert_eq!(sharp.value(10, 30), 0.5);
        assert_eq!(sharp.value(9, 30), 0.0);
    }
}

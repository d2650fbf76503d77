//! Polyharmonic radial-basis-function interpolation in the plane.
//!
//! The interpolant is
//!
//! ```text
//! s(x, y) = Σᵢ wᵢ φₖ(‖(x, y) − (xᵢ, yᵢ)‖) + v₁ x + v₂ y + v₃
//! ```
//!
//! with `φ₁(r) = r` and `φ₂(r) = r² log r`. Weights and affine coefficients come
//! from the `(n + 3) × (n + 3)` block system
//!
//! ```text
//! ⎡ A  Bᵀ ⎤ ⎡ w ⎤   ⎡ g ⎤
//! ⎣ B  0  ⎦ ⎣ v ⎦ = ⎣ 0 ⎦ ,   Aᵢⱼ = φₖ(‖pᵢ − pⱼ‖),   B = [1 … 1; x₁ … xₙ; y₁ … yₙ]
//! ```
//!
//! Because `B` stacks the ones row first, the raw solution orders the affine part
//! as (constant, x, y). [`AffineTerm`] re-exposes it as `v₁` (x), `v₂` (y), `v₃` (constant).
//!
//! Fitting followed by evaluation is linear in the data values, so its adjoint
//! is one transposed solve; see [`spline_vjp`]. Control positions are constants
//! of a fit and carry no gradient.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::linalg::{LuFactorization, SquareMatrix};

/// Queries above this count are evaluated in parallel.
const PARALLEL_THRESHOLD: usize = 4096;

/// Radial basis order `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RbfOrder {
    /// `φ₁(r) = r`. The default: it overshoots less than the thin-plate kernel.
    #[default]
    Linear,
    /// `φ₂(r) = r² log r`, the thin-plate spline.
    ThinPlate,
}

impl RbfOrder {
    pub fn from_k(k: u32) -> Result<Self> {
        match k {
            1 => Ok(RbfOrder::Linear),
            2 => Ok(RbfOrder::ThinPlate),
            other => Err(Error::InvalidArgument(format!(
                "unsupported RBF order k = {other} (expected 1 or 2)"
            ))),
        }
    }

    pub fn k(self) -> u32 {
        match self {
            RbfOrder::Linear => 1,
            RbfOrder::ThinPlate => 2,
        }
    }

    /// `φₖ(r)` for `r ≥ 0`, with `φ₂(0) = 0` by continuity. Unchecked.
    #[inline]
    pub fn phi(self, r: f64) -> f64 {
        match self {
            RbfOrder::Linear => r,
            RbfOrder::ThinPlate => {
                if r == 0.0 {
                    0.0
                } else {
                    r * r * r.ln()
                }
            }
        }
    }
}

/// Checked `φₖ(r)`.
pub fn rbf_kernel(r: f64, k: u32) -> Result<f64> {
    let order = RbfOrder::from_k(k)?;
    if r.is_nan() || r < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "RBF radius must be nonnegative, got {r}"
        )));
    }
    if !r.is_finite() {
        return Err(Error::NonFinite("RBF radius"));
    }
    Ok(order.phi(r))
}

/// At least three distinct, finite, non-collinear points.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPoints(Vec<Point2>);

impl ControlPoints {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "need at least 3 control points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("control points"));
        }
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                if points[i] == points[j] {
                    return Err(Error::DuplicatePoints {
                        first: i,
                        second: j,
                        x: points[i].x,
                        y: points[i].y,
                    });
                }
            }
        }
        if all_collinear(&points) {
            return Err(Error::CollinearPoints { count: points.len() });
        }
        Ok(Self(points))
    }

    pub fn points(&self) -> &[Point2] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn all_collinear(points: &[Point2]) -> bool {
    // Anchor the test on the farthest pair from the first point so the tolerance scales.
    let a = points[0];
    let (b, span2) = points
        .iter()
        .map(|&p| (p, (p - a).norm_squared()))
        .fold((a, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if span2 == 0.0 {
        return true;
    }
    let d = b - a;
    points.iter().all(|&p| {
        let e = p - a;
        (d.x * e.y - d.y * e.x).abs() <= 1e-12 * span2
    })
}

/// Affine part of the interpolant, `v₁ x + v₂ y + v₃`.
///
/// Some write-ups of the same interpolant call these `b`, `c` and `a`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AffineTerm {
    /// `v₁`, the x coefficient.
    pub x: f64,
    /// `v₂`, the y coefficient.
    pub y: f64,
    /// `v₃`, the constant.
    pub constant: f64,
}

impl AffineTerm {
    /// `(v₁, v₂, v₃)`.
    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.constant]
    }

    fn eval(&self, q: Point2) -> f64 {
        self.x * q.x + self.y * q.y + self.constant
    }
}

/// A fitted interpolant for one scalar channel. Immutable.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineParams {
    control: ControlPoints,
    order: RbfOrder,
    weights: Vec<f64>,
    affine: AffineTerm,
}

impl SplineParams {
    pub fn control(&self) -> &ControlPoints {
        &self.control
    }

    pub fn order(&self) -> RbfOrder {
        self.order
    }

    /// Radial weights `wᵢ`, one per control point.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn affine(&self) -> AffineTerm {
        self.affine
    }

    /// `s(q)` without input validation.
    #[inline]
    pub fn eval(&self, q: Point2) -> f64 {
        let radial: f64 = self
            .control
            .0
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| w * self.order.phi(q.distance(p)))
            .sum();
        radial + self.affine.eval(q)
    }

    /// Evaluates at every query; fails on a non-finite query.
    pub fn eval_many(&self, queries: &[Point2]) -> Result<Vec<f64>> {
        if queries.iter().any(|q| !q.is_finite()) {
            return Err(Error::NonFinite("spline query"));
        }
        Ok(if queries.len() >= PARALLEL_THRESHOLD {
            queries.par_iter().map(|&q| self.eval(q)).collect()
        } else {
            queries.iter().map(|&q| self.eval(q)).collect()
        })
    }
}

/// A factored interpolation system for fixed control points.
///
/// Several value channels (e.g. horizontal and vertical displacement) share one
/// factorization.
#[derive(Debug, Clone)]
pub struct SplineSystem {
    control: ControlPoints,
    order: RbfOrder,
    lu: LuFactorization,
}

impl SplineSystem {
    pub fn new(control: ControlPoints, order: RbfOrder) -> Result<Self> {
        let n = control.len();
        let pts = control.points();
        let mut k = SquareMatrix::zeros(n + 3);
        for i in 0..n {
            for j in 0..n {
                k.set(i, j, order.phi(pts[i].distance(pts[j])));
            }
            // Bᵀ block: columns (1, xᵢ, yᵢ).
            k.set(i, n, 1.0);
            k.set(i, n + 1, pts[i].x);
            k.set(i, n + 2, pts[i].y);
            k.set(n, i, 1.0);
            k.set(n + 1, i, pts[i].x);
            k.set(n + 2, i, pts[i].y);
        }
        let lu = LuFactorization::new(k)?;
        Ok(Self { control, order, lu })
    }

    pub fn control(&self) -> &ControlPoints {
        &self.control
    }

    pub fn order(&self) -> RbfOrder {
        self.order
    }

    fn check_values(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.control.len() {
            return Err(Error::shape("spline values", self.control.len(), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spline values"));
        }
        Ok(())
    }

    pub fn fit(&self, values: &[f64]) -> Result<SplineParams> {
        self.check_values(values)?;
        let n = self.control.len();
        let mut rhs = values.to_vec();
        rhs.extend_from_slice(&[0.0; 3]);
        let mut sol = self.lu.solve(&rhs);
        let affine = AffineTerm {
            x: sol[n + 1],
            y: sol[n + 2],
            constant: sol[n],
        };
        sol.truncate(n);
        Ok(SplineParams {
            control: self.control.clone(),
            order: self.order,
            weights: sol,
            affine,
        })
    }

    /// Gradient of `Σⱼ cotangentⱼ · s(queryⱼ)` with respect to the fitted values.
    pub fn vjp(&self, queries: &[Point2], cotangent: &[f64]) -> Result<Vec<f64>> {
        if queries.len() != cotangent.len() {
            return Err(Error::shape("spline cotangent", queries.len(), cotangent.len()));
        }
        if queries.iter().any(|q| !q.is_finite()) {
            return Err(Error::NonFinite("spline query"));
        }
        if cotangent.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("spline cotangent"));
        }
        let n = self.control.len();
        let pts = self.control.points();
        // Eᵀ c, where row j of E evaluates the basis at query j (layout: w, constant, x, y).
        let accumulate = |range: std::ops::Range<usize>| {
            let mut acc = vec![0.0; n + 3];
            for j in range {
                let (q, c) = (queries[j], cotangent[j]);
                if c == 0.0 {
                    continue;
                }
                for (a, &p) in acc.iter_mut().zip(pts) {
                    *a += c * self.order.phi(q.distance(p));
                }
                acc[n] += c;
                acc[n + 1] += c * q.x;
                acc[n + 2] += c * q.y;
            }
            acc
        };
        // Fixed chunking keeps the summation order independent of the thread schedule.
        let chunk = 2048;
        let partials: Vec<Vec<f64>> = (0..queries.len().div_ceil(chunk))
            .into_par_iter()
            .map(|b| accumulate(b * chunk..((b + 1) * chunk).min(queries.len())))
            .collect();
        let mut et_c = vec![0.0; n + 3];
        for part in partials {
            for (a, p) in et_c.iter_mut().zip(part) {
                *a += p;
            }
        }
        let mut grad = self.lu.solve_transpose(&et_c);
        grad.truncate(n);
        Ok(grad)
    }
}

/// Fits an interpolant of `values` at `points`.
pub fn fit_spline(points: &ControlPoints, values: &[f64], order: RbfOrder) -> Result<SplineParams> {
    SplineSystem::new(points.clone(), order)?.fit(values)
}

/// Evaluates a fitted interpolant at each query.
pub fn eval_spline(params: &SplineParams, queries: &[Point2]) -> Result<Vec<f64>> {
    params.eval_many(queries)
}

/// Gradient of `Σⱼ cotangentⱼ · s(queryⱼ)` with respect to `values`, where `s`
/// is the interpolant fitted to `values` at `points`.
///
/// The map from values to query outputs is linear, so `values` only gets validated.
pub fn spline_vjp(
    points: &ControlPoints,
    values: &[f64],
    order: RbfOrder,
    queries: &[Point2],
    cotangent: &[f64],
) -> Result<Vec<f64>> {
    let system = SplineSystem::new(points.clone(), order)?;
    system.check_values(values)?;
    system.vjp(queries, cotangent)
}

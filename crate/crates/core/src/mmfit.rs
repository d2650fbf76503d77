//! 3-D morphable-model fitting to 2-D landmarks and vertex colors.
//!
//! Object-space vertices are `V_w = [B^x s | B^y s | B^z s] + μ`. A modelview
//! `[σR | t]` and a symmetric OpenGL perspective frustum map them to clip space,
//! and perspective division yields normalized device coordinates (NDC): x to
//! the right, y up, both in `[−1, 1]` across the frame. Landmark targets for
//! [`fit_shape`] are NDC points.
//!
//! Colors are flattened vertex-major (`r, g, b` of vertex 0, then vertex 1, …).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composite::Mask;
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::image::Image;
use crate::linalg::{dot, norm, SquareMatrix};
use crate::warp::sample_bilinear;

pub const DEFAULT_FOV_DEGREES: f64 = 10.0;
pub const DEFAULT_NEAR: f64 = 0.1;
pub const DEFAULT_FAR: f64 = 1000.0;
/// Shape regularization weight `λ`.
pub const DEFAULT_SHAPE_LAMBDA: f64 = 1e-3;
pub const DEFAULT_MAX_ITERATIONS: usize = 1000;
pub const DEFAULT_GRADIENT_TOLERANCE: f64 = 1e-6;
pub const ARMIJO_C: f64 = 1e-4;
pub const DEFAULT_JITTER_COUNT: usize = 16;
pub const DEFAULT_JITTER_DEGREES: f64 = 3.0;

/// `|w|` below this makes a projected point degenerate.
const MIN_W: f64 = 1e-9;

/// Linear shape and color model with its landmark-vertex correspondence.
///
/// Matrices are row-major: `basis_x` is `V × p`, `color_basis` is `3V × p`.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphableModel {
    vertex_count: usize,
    coeff_count: usize,
    mean_positions: Vec<f64>,
    basis_x: Vec<f64>,
    basis_y: Vec<f64>,
    basis_z: Vec<f64>,
    mean_colors: Vec<f64>,
    color_basis: Vec<f64>,
    landmark_vertices: Vec<usize>,
    triangles: Vec<[usize; 3]>,
}

/// Raw arrays of a [`MorphableModel`], in the layout documented there.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParts {
    pub vertex_count: usize,
    pub coeff_count: usize,
    pub mean_positions: Vec<f64>,
    pub basis_x: Vec<f64>,
    pub basis_y: Vec<f64>,
    pub basis_z: Vec<f64>,
    pub mean_colors: Vec<f64>,
    pub color_basis: Vec<f64>,
    pub landmark_vertices: Vec<usize>,
    pub triangles: Vec<[usize; 3]>,
}

impl MorphableModel {
    pub fn new(parts: ModelParts) -> Result<Self> {
        let (v, p) = (parts.vertex_count, parts.coeff_count);
        if v == 0 {
            return Err(Error::InvalidArgument("model has no vertices".into()));
        }
        for (what, len, want) in [
            ("mean positions", parts.mean_positions.len(), 3 * v),
            ("x shape basis", parts.basis_x.len(), v * p),
            ("y shape basis", parts.basis_y.len(), v * p),
            ("z shape basis", parts.basis_z.len(), v * p),
            ("mean colors", parts.mean_colors.len(), 3 * v),
            ("color basis", parts.color_basis.len(), 3 * v * p),
        ] {
            if len != want {
                return Err(Error::shape(what, want, len));
            }
        }
        let arrays = [
            &parts.mean_positions,
            &parts.basis_x,
            &parts.basis_y,
            &parts.basis_z,
            &parts.mean_colors,
            &parts.color_basis,
        ];
        if arrays.iter().any(|a| a.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("morphable model"));
        }
        if let Some(&i) = parts.landmark_vertices.iter().find(|&&i| i >= v) {
            return Err(Error::InvalidArgument(format!(
                "landmark vertex {i} out of range for {v} vertices"
            )));
        }
        if let Some(t) = parts.triangles.iter().find(|t| t.iter().any(|&i| i >= v)) {
            return Err(Error::InvalidArgument(format!(
                "triangle {t:?} references a vertex >= {v}"
            )));
        }
        Ok(Self {
            vertex_count: v,
            coeff_count: p,
            mean_positions: parts.mean_positions,
            basis_x: parts.basis_x,
            basis_y: parts.basis_y,
            basis_z: parts.basis_z,
            mean_colors: parts.mean_colors,
            color_basis: parts.color_basis,
            landmark_vertices: parts.landmark_vertices,
            triangles: parts.triangles,
        })
    }

    pub fn into_parts(self) -> ModelParts {
        ModelParts {
            vertex_count: self.vertex_count,
            coeff_count: self.coeff_count,
            mean_positions: self.mean_positions,
            basis_x: self.basis_x,
            basis_y: self.basis_y,
            basis_z: self.basis_z,
            mean_colors: self.mean_colors,
            color_basis: self.color_basis,
            landmark_vertices: self.landmark_vertices,
            triangles: self.triangles,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn coeff_count(&self) -> usize {
        self.coeff_count
    }

    pub fn landmark_vertices(&self) -> &[usize] {
        &self.landmark_vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn mean_colors(&self) -> &[f64] {
        &self.mean_colors
    }

    pub fn color_basis(&self) -> &[f64] {
        &self.color_basis
    }

    /// Replaces the landmark correspondence, e.g. with the result of [`correspond_by_voting`].
    pub fn with_landmark_vertices(mut self, indices: Vec<usize>) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.vertex_count) {
            return Err(Error::InvalidArgument(format!(
                "landmark vertex {i} out of range for {} vertices",
                self.vertex_count
            )));
        }
        self.landmark_vertices = indices;
        Ok(self)
    }

    fn check_coeffs(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.coeff_count {
            return Err(Error::shape("shape coefficients", self.coeff_count, s.len()));
        }
        Ok(())
    }

    /// Object-space position of vertex `i` for coefficients `s`.
    pub fn vertex(&self, i: usize, s: &[f64]) -> [f64; 3] {
        let p = self.coeff_count;
        let row = i * p..(i + 1) * p;
        let m = &self.mean_positions[3 * i..3 * i + 3];
        [
            m[0] + dot(&self.basis_x[row.clone()], s),
            m[1] + dot(&self.basis_y[row.clone()], s),
            m[2] + dot(&self.basis_z[row], s),
        ]
    }

    /// All vertex positions for coefficients `s`.
    pub fn vertices(&self, s: &[f64]) -> Result<Vec<[f64; 3]>> {
        self.check_coeffs(s)?;
        Ok((0..self.vertex_count)
            .into_par_iter()
            .map(|i| self.vertex(i, s))
            .collect())
    }
}

/// Perspective camera with a scaled, rotated and translated modelview.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub fov_degrees: f64,
    pub near: f64,
    pub far: f64,
    pub aspect: f64,
    pub translation: [f64; 3],
    pub scale: f64,
    /// Row-major rotation applied before scaling; identity unless jittered.
    pub rotation: [[f64; 3]; 3],
}

const IDENTITY3: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl Default for CameraParams {
    fn default() -> Self {
        Self {
            fov_degrees: DEFAULT_FOV_DEGREES,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
            aspect: 1.0,
            translation: [0.0, 0.0, 0.0],
            scale: 1.0,
            rotation: IDENTITY3,
        }
    }
}

fn rotate(r: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

fn rotate_transpose(r: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[1][0] * v[1] + r[2][0] * v[2],
        r[0][1] * v[0] + r[1][1] * v[1] + r[2][1] * v[2],
        r[0][2] * v[0] + r[1][2] * v[1] + r[2][2] * v[2],
    ]
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Rotation by `yaw` about y, then `pitch` about x, then `roll` about z (radians).
pub fn rotation_from_angles(yaw: f64, pitch: f64, roll: f64) -> [[f64; 3]; 3] {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
    let rz = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
    matmul3(&rz, &matmul3(&rx, &ry))
}

impl CameraParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.near > 0.0 && self.far > self.near) {
            return Err(Error::InvalidArgument(format!(
                "camera needs 0 < near < far, got near {} far {}",
                self.near, self.far
            )));
        }
        if !(self.fov_degrees > 0.0 && self.fov_degrees < 180.0) {
            return Err(Error::InvalidArgument(format!(
                "field of view {} out of (0, 180)",
                self.fov_degrees
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "camera scale must be positive, got {}",
                self.scale
            )));
        }
        if self.aspect.is_nan() || self.aspect <= 0.0 || self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("camera aspect or translation is invalid".into()));
        }
        Ok(())
    }

    /// `cot(fov / 2)`.
    pub fn focal(&self) -> f64 {
        1.0 / (self.fov_degrees.to_radians() / 2.0).tan()
    }

    /// The 4×4 perspective matrix `P`.
    pub fn projection_matrix(&self) -> [[f64; 4]; 4] {
        let f = self.focal();
        let (n, fa) = (self.near, self.far);
        [
            [f / self.aspect, 0.0, 0.0, 0.0],
            [0.0, f, 0.0, 0.0],
            [0.0, 0.0, (fa + n) / (n - fa), 2.0 * fa * n / (n - fa)],
            [0.0, 0.0, -1.0, 0.0],
        ]
    }

    /// The 4×4 modelview matrix `[σR | t]`.
    pub fn modelview_matrix(&self) -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self.scale * self.rotation[i][j];
            }
            m[i][3] = self.translation[i];
        }
        m[3][3] = 1.0;
        m
    }

    /// Camera-space position `σR·v + t`.
    fn camera_space(&self, v: [f64; 3]) -> [f64; 3] {
        let r = rotate(&self.rotation, v);
        [
            self.scale * r[0] + self.translation[0],
            self.scale * r[1] + self.translation[1],
            self.scale * r[2] + self.translation[2],
        ]
    }

    /// NDC position of an object-space point; `index` labels errors.
    pub fn project(&self, v: [f64; 3], index: usize) -> Result<Point2> {
        let c = self.camera_space(v);
        let w = -c[2];
        if w.abs() < MIN_W || !w.is_finite() {
            return Err(Error::DegenerateProjection { index, w });
        }
        let f = self.focal();
        Ok(Point2::new(f / self.aspect * c[0] / w, f * c[1] / w))
    }
}

/// NDC to pixel coordinates (pixel centers at integers, y down).
pub fn ndc_to_pixel(p: Point2, width: usize, height: usize) -> Point2 {
    Point2::new(
        (p.x + 1.0) * width as f64 / 2.0 - 0.5,
        (1.0 - p.y) * height as f64 / 2.0 - 0.5,
    )
}

/// Pixel to NDC coordinates; the inverse of [`ndc_to_pixel`].
pub fn pixel_to_ndc(p: Point2, width: usize, height: usize) -> Point2 {
    Point2::new(
        2.0 * (p.x + 0.5) / width as f64 - 1.0,
        1.0 - 2.0 * (p.y + 0.5) / height as f64,
    )
}

/// NDC projections of the model's landmark vertices.
pub fn project_landmark_vertices(model: &MorphableModel, s: &[f64], cam: &CameraParams) -> Result<Vec<Point2>> {
    model.check_coeffs(s)?;
    cam.validate()?;
    model
        .landmark_vertices
        .iter()
        .enumerate()
        .map(|(k, &i)| cam.project(model.vertex(i, s), k))
        .collect()
}

/// NDC projections of every model vertex.
pub fn project_vertices(model: &MorphableModel, s: &[f64], cam: &CameraParams) -> Result<Vec<Point2>> {
    cam.validate()?;
    let verts = model.vertices(s)?;
    verts.iter().enumerate().map(|(i, &v)| cam.project(v, i)).collect()
}

/// Loss `‖L − V‖² + λ‖s‖²` and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeGradient {
    pub loss: f64,
    pub grad_s: Vec<f64>,
    pub grad_t: [f64; 3],
    pub grad_scale: f64,
}

/// Per-landmark projection with the derivatives of `(u, v)` in camera space.
struct Projected {
    uv: [f64; 2],
    /// `∂(u, v)/∂c` for camera-space `c`.
    jac: [[f64; 3]; 2],
    rotated: [f64; 3],
}

fn project_with_jacobian(cam: &CameraParams, v: [f64; 3], index: usize) -> Result<Projected> {
    let rotated = rotate(&cam.rotation, v);
    let c = [
        cam.scale * rotated[0] + cam.translation[0],
        cam.scale * rotated[1] + cam.translation[1],
        cam.scale * rotated[2] + cam.translation[2],
    ];
    let w = -c[2];
    if w.abs() < MIN_W || !w.is_finite() {
        return Err(Error::DegenerateProjection { index, w });
    }
    let (fx, fy) = (cam.focal() / cam.aspect, cam.focal());
    let (u, vv) = (fx * c[0] / w, fy * c[1] / w);
    Ok(Projected {
        uv: [u, vv],
        jac: [[fx / w, 0.0, u / w], [0.0, fy / w, vv / w]],
        rotated,
    })
}

fn check_targets(model: &MorphableModel, targets: &[Point2]) -> Result<()> {
    if targets.len() != model.landmark_vertices.len() {
        return Err(Error::shape(
            "landmark targets",
            model.landmark_vertices.len(),
            targets.len(),
        ));
    }
    if targets.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("landmark targets"));
    }
    Ok(())
}

pub fn shape_loss_and_gradient(
    model: &MorphableModel,
    s: &[f64],
    cam: &CameraParams,
    targets: &[Point2],
    lambda: f64,
) -> Result<ShapeGradient> {
    model.check_coeffs(s)?;
    check_targets(model, targets)?;
    cam.validate()?;
    let p = model.coeff_count;
    let mut loss = lambda * dot(s, s);
    let mut grad_s: Vec<f64> = s.iter().map(|v| 2.0 * lambda * v).collect();
    let mut grad_t = [0.0; 3];
    let mut grad_scale = 0.0;
    for (k, (&i, target)) in model.landmark_vertices.iter().zip(targets).enumerate() {
        let pr = project_with_jacobian(cam, model.vertex(i, s), k)?;
        let r = [pr.uv[0] - target.x, pr.uv[1] - target.y];
        loss += r[0] * r[0] + r[1] * r[1];
        // ∂loss/∂c for this landmark.
        let gc: [f64; 3] = std::array::from_fn(|j| 2.0 * (r[0] * pr.jac[0][j] + r[1] * pr.jac[1][j]));
        for j in 0..3 {
            grad_t[j] += gc[j];
        }
        grad_scale += dot(&gc, &pr.rotated);
        let gw = rotate_transpose(&cam.rotation, gc).map(|v| v * cam.scale);
        let row = i * p..(i + 1) * p;
        for (((g, bx), by), bz) in grad_s
            .iter_mut()
            .zip(&model.basis_x[row.clone()])
            .zip(&model.basis_y[row.clone()])
            .zip(&model.basis_z[row])
        {
            *g += gw[0] * bx + gw[1] * by + gw[2] * bz;
        }
    }
    Ok(ShapeGradient {
        loss,
        grad_s,
        grad_t,
        grad_scale,
    })
}

/// Search direction of [`fit_shape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Descent {
    /// Steepest descent on the raw parameters.
    Gradient,
    /// Steepest descent after rescaling every parameter by the diagonal of the
    /// Gauss–Newton matrix.
    #[default]
    DiagonalScaled,
    /// Gradient preconditioned by the full Gauss–Newton matrix.
    GaussNewton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeFitOptions {
    pub lambda: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub descent: Descent,
}

impl Default for ShapeFitOptions {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_SHAPE_LAMBDA,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            gradient_tolerance: DEFAULT_GRADIENT_TOLERANCE,
            descent: Descent::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeFitResult {
    pub s: Vec<f64>,
    pub translation: [f64; 3],
    pub scale: f64,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Loss after each accepted step, starting with the initial loss.
    #[serde(skip)]
    pub loss_history: Vec<f64>,
}

impl ShapeFitResult {
    /// `cam` with the fitted pose.
    pub fn camera(&self, cam: &CameraParams) -> CameraParams {
        CameraParams {
            translation: self.translation,
            scale: self.scale,
            ..*cam
        }
    }
}

fn bbox(points: impl IntoIterator<Item = Point2>) -> (Point2, Point2) {
    points.into_iter().fold(
        (
            Point2::new(f64::INFINITY, f64::INFINITY),
            Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        ),
        |(lo, hi), p| {
            (
                Point2::new(lo.x.min(p.x), lo.y.min(p.y)),
                Point2::new(hi.x.max(p.x), hi.y.max(p.y)),
            )
        },
    )
}

/// The mean face centered on the view axis at the depth where its landmark
/// bounding box fills the frame, with unit scale.
pub fn framing_pose(model: &MorphableModel, cam: &CameraParams) -> Result<CameraParams> {
    Ok(framing(model, cam)?.0)
}

/// Framing pose plus the mean landmark vertices and their rotated centroid depth.
fn framing(model: &MorphableModel, cam: &CameraParams) -> Result<(CameraParams, Vec<[f64; 3]>, f64, f64)> {
    cam.validate()?;
    if model.landmark_vertices.is_empty() {
        return Err(Error::InvalidArgument("model has no landmark vertices".into()));
    }
    let zero = vec![0.0; model.coeff_count];
    let mean: Vec<[f64; 3]> = model
        .landmark_vertices
        .iter()
        .map(|&i| model.vertex(i, &zero))
        .collect();
    let n = mean.len() as f64;
    let centroid: [f64; 3] =
        std::array::from_fn(|j| mean.iter().map(|v| rotate(&cam.rotation, *v)[j]).sum::<f64>() / n);
    let (lo, hi) = bbox(mean.iter().map(|v| {
        let r = rotate(&cam.rotation, *v);
        Point2::new(r[0], r[1])
    }));
    let extent = (hi.x - lo.x).max(hi.y - lo.y).max(f64::EPSILON);
    let depth = cam.focal() * extent / 2.0;
    let pose = CameraParams {
        scale: 1.0,
        translation: [-centroid[0], -centroid[1], -depth - centroid[2]],
        ..*cam
    };
    Ok((pose, mean, depth, centroid[2]))
}

/// Starting pose: [`framing_pose`], then scaled so the projected landmark
/// bounding box matches the targets'.
pub fn initial_pose(model: &MorphableModel, targets: &[Point2], cam: &CameraParams) -> Result<CameraParams> {
    check_targets(model, targets)?;
    let (mut pose, mean, depth, cz) = framing(model, cam)?;
    let projected: Vec<Point2> = mean
        .iter()
        .enumerate()
        .map(|(k, v)| pose.project(*v, k))
        .collect::<Result<_>>()?;
    let (plo, phi) = bbox(projected);
    let (tlo, thi) = bbox(targets.iter().copied());
    let ratio = (thi - tlo).norm() / (phi - plo).norm();
    if ratio.is_finite() && ratio > 0.0 {
        pose.scale = ratio;
        pose.translation[0] *= ratio;
        pose.translation[1] *= ratio;
        pose.translation[2] = -depth - ratio * cz;
    }
    Ok(pose)
}

/// Parameter vector layout: `[s…, t_x, t_y, t_z, σ]`.
fn pack(s: &[f64], cam: &CameraParams) -> Vec<f64> {
    let mut x = s.to_vec();
    x.extend_from_slice(&cam.translation);
    x.push(cam.scale);
    x
}

fn unpack<'a>(x: &'a [f64], cam: &CameraParams) -> (&'a [f64], CameraParams) {
    let p = x.len() - 4;
    (
        &x[..p],
        CameraParams {
            translation: [x[p], x[p + 1], x[p + 2]],
            scale: x[p + 3],
            ..*cam
        },
    )
}

fn objective(
    model: &MorphableModel,
    x: &[f64],
    cam: &CameraParams,
    targets: &[Point2],
    lambda: f64,
) -> Option<(f64, Vec<f64>)> {
    let (s, c) = unpack(x, cam);
    let g = shape_loss_and_gradient(model, s, &c, targets, lambda).ok()?;
    if !g.loss.is_finite() {
        return None;
    }
    let mut grad = g.grad_s;
    grad.extend_from_slice(&g.grad_t);
    grad.push(g.grad_scale);
    Some((g.loss, grad))
}

/// Gauss–Newton matrix `2JᵀJ + 2λ·I_s` of the loss at `x`.
fn gauss_newton(model: &MorphableModel, x: &[f64], cam: &CameraParams, lambda: f64) -> Result<SquareMatrix> {
    let p = model.coeff_count;
    let m = p + 4;
    let (s, c) = unpack(x, cam);
    let mut h = SquareMatrix::zeros(m);
    let mut row = vec![0.0; m];
    for (k, &i) in model.landmark_vertices.iter().enumerate() {
        let pr = project_with_jacobian(&c, model.vertex(i, s), k)?;
        for jac in &pr.jac {
            let gw = rotate_transpose(&c.rotation, *jac).map(|v| v * c.scale);
            for j in 0..p {
                row[j] = gw[0] * model.basis_x[i * p + j]
                    + gw[1] * model.basis_y[i * p + j]
                    + gw[2] * model.basis_z[i * p + j];
            }
            row[p..p + 3].copy_from_slice(jac);
            row[p + 3] = dot(jac, &pr.rotated);
            for a in 0..m {
                if row[a] == 0.0 {
                    continue;
                }
                for b in 0..m {
                    h.add(a, b, 2.0 * row[a] * row[b]);
                }
            }
        }
    }
    for j in 0..p {
        h.add(j, j, 2.0 * lambda);
    }
    Ok(h)
}

fn direction(
    descent: Descent,
    model: &MorphableModel,
    x: &[f64],
    grad: &[f64],
    cam: &CameraParams,
    lambda: f64,
) -> Result<Vec<f64>> {
    match descent {
        Descent::Gradient => Ok(grad.iter().map(|g| -g).collect()),
        Descent::DiagonalScaled => {
            let h = gauss_newton(model, x, cam, lambda)?;
            Ok(grad
                .iter()
                .enumerate()
                .map(|(j, g)| -g / h.get(j, j).max(f64::MIN_POSITIVE.sqrt()))
                .collect())
        }
        Descent::GaussNewton => {
            let mut h = gauss_newton(model, x, cam, lambda)?;
            // A small relative ridge keeps the pose block invertible when the
            // perspective cue is weak.
            let m = h.size();
            let trace: f64 = (0..m).map(|j| h.get(j, j)).sum::<f64>() / m as f64;
            for j in 0..m {
                h.add(j, j, 1e-12 * trace);
            }
            let step = h.lu()?.solve(grad);
            Ok(step.into_iter().map(|v| -v).collect())
        }
    }
}

/// Jointly fits shape coefficients and pose `(t, σ)` to NDC landmark targets
/// by descent with an Armijo backtracking line search, starting from
/// [`initial_pose`] and `s = 0`.
pub fn fit_shape(
    model: &MorphableModel,
    targets: &[Point2],
    cam_init: &CameraParams,
    opts: &ShapeFitOptions,
) -> Result<ShapeFitResult> {
    if targets.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "shape fit needs at least 3 landmarks, got {}",
            targets.len()
        )));
    }
    if !(opts.lambda >= 0.0 && opts.lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be non-negative, got {}",
            opts.lambda
        )));
    }
    let pose = initial_pose(model, targets, cam_init)?;
    let mut x = pack(&vec![0.0; model.coeff_count], &pose);
    let (mut loss, mut grad) =
        objective(model, &x, cam_init, targets, opts.lambda).ok_or(Error::Diverged { iteration: 0 })?;
    let mut history = vec![loss];
    let mut step: f64 = 1.0;
    let mut iterations = 0;
    let mut converged = norm(&grad) < opts.gradient_tolerance;
    while !converged && iterations < opts.max_iterations {
        let d = direction(opts.descent, model, &x, &grad, cam_init, opts.lambda)?;
        let slope = dot(&grad, &d);
        if slope.is_nan() || slope >= 0.0 {
            break;
        }
        let mut alpha = match opts.descent {
            Descent::Gradient => (2.0 * step).min(1e6),
            _ => 1.0_f64.min(2.0 * step),
        };
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            if let Some((l, g)) = objective(model, &trial, cam_init, targets, opts.lambda) {
                if l <= loss + ARMIJO_C * alpha * slope {
                    accepted = Some((trial, l, g));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, l, g)) = accepted else {
            // No decrease representable in floating point: we are at the minimum
            // to working precision.
            break;
        };
        iterations += 1;
        step = alpha;
        x = trial;
        loss = l;
        grad = g;
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: iterations });
        }
        history.push(loss);
        converged = norm(&grad) < opts.gradient_tolerance;
    }
    let (s, cam) = unpack(&x, cam_init);
    Ok(ShapeFitResult {
        s: s.to_vec(),
        translation: cam.translation,
        scale: cam.scale,
        loss,
        iterations,
        converged,
        loss_history: history,
    })
}

/// Unit vertex normals (area-weighted face normals, counter-clockwise
/// winding). Vertices on no triangle get a zero normal.
pub fn vertex_normals(model: &MorphableModel, s: &[f64]) -> Result<Vec<[f64; 3]>> {
    let verts = model.vertices(s)?;
    let mut acc = vec![[0.0; 3]; verts.len()];
    for t in &model.triangles {
        let [a, b, c] = t.map(|i| verts[i]);
        let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let n = [
            e1[1] * e2[2] - e1[2] * e2[1],
            e1[2] * e2[0] - e1[0] * e2[2],
            e1[0] * e2[1] - e1[1] * e2[0],
        ];
        for &i in t {
            for j in 0..3 {
                acc[i][j] += n[j];
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|n| {
            let l = dot(&n, &n).sqrt();
            if l > 0.0 {
                n.map(|v| v / l)
            } else {
                [0.0; 3]
            }
        })
        .collect())
}

/// Camera-space z components of the vertex normals (positive faces the camera).
pub fn camera_normals_z(model: &MorphableModel, s: &[f64], cam: &CameraParams) -> Result<Vec<f64>> {
    Ok(vertex_normals(model, s)?
        .into_iter()
        .map(|n| rotate(&cam.rotation, n)[2])
        .collect())
}

/// Source of 2-D landmarks for a rendering of the mean face.
pub trait LandmarkDetector {
    /// NDC landmarks detected in the mean face rendered with `cam`;
    /// `jitter_index` numbers the renders of one voting run.
    fn detect(&self, jitter_index: usize, cam: &CameraParams) -> Result<Vec<Point2>>;
}

impl<F> LandmarkDetector for F
where
    F: Fn(usize, &CameraParams) -> Result<Vec<Point2>>,
{
    fn detect(&self, jitter_index: usize, cam: &CameraParams) -> Result<Vec<Point2>> {
        self(jitter_index, cam)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VotingOptions {
    pub jitter_count: usize,
    /// Each of yaw, pitch and roll is drawn uniformly from `±jitter_degrees`.
    pub jitter_degrees: f64,
}

impl Default for VotingOptions {
    fn default() -> Self {
        Self {
            jitter_count: DEFAULT_JITTER_COUNT,
            jitter_degrees: DEFAULT_JITTER_DEGREES,
        }
    }
}

/// The jittered cameras used by [`correspond_by_voting`] for `rng_seed`.
pub fn jittered_cameras(cam: &CameraParams, opts: &VotingOptions, rng_seed: u64) -> Vec<CameraParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let a = opts.jitter_degrees.to_radians();
    (0..opts.jitter_count)
        .map(|_| {
            let mut draw = || {
                if a > 0.0 {
                    rng.random_range(-a..=a)
                } else {
                    0.0
                }
            };
            let (yaw, pitch, roll) = (draw(), draw(), draw());
            CameraParams {
                rotation: matmul3(&rotation_from_angles(yaw, pitch, roll), &cam.rotation),
                ..*cam
            }
        })
        .collect()
}

/// Matches detected landmarks to mean-face vertices under several jittered
/// cameras and returns the most frequent match per landmark.
///
/// Only vertices whose normal faces the camera are candidates; a model without
/// triangles has no normals, so all its vertices are. Distance and vote ties
/// go to the lower vertex index.
pub fn correspond_by_voting(
    model: &MorphableModel,
    cam: &CameraParams,
    detector: &dyn LandmarkDetector,
    opts: &VotingOptions,
    rng_seed: u64,
) -> Result<Vec<usize>> {
    if opts.jitter_count == 0 {
        return Err(Error::InvalidArgument(
            "voting needs at least one jittered camera".into(),
        ));
    }
    cam.validate()?;
    let zero = vec![0.0; model.coeff_count];
    let verts = model.vertices(&zero)?;
    let normals = vertex_normals(model, &zero)?;
    let mut votes: Vec<BTreeMap<usize, usize>> = Vec::new();
    for (j, jc) in jittered_cameras(cam, opts, rng_seed).iter().enumerate() {
        let detected = detector.detect(j, jc)?;
        if votes.is_empty() {
            votes = vec![BTreeMap::new(); detected.len()];
        } else if detected.len() != votes.len() {
            return Err(Error::shape("detected landmarks", votes.len(), detected.len()));
        }
        let candidates: Vec<(usize, Point2)> = verts
            .iter()
            .enumerate()
            .filter(|(i, _)| model.triangles.is_empty() || rotate(&jc.rotation, normals[*i])[2] > 0.0)
            .filter_map(|(i, v)| jc.project(*v, i).ok().map(|p| (i, p)))
            .collect();
        if candidates.is_empty() {
            return Err(Error::InvalidArgument("no front-facing vertices to match".into()));
        }
        for (l, target) in detected.iter().enumerate() {
            let mut best = (f64::INFINITY, usize::MAX);
            for &(i, p) in &candidates {
                let d = p.distance(*target);
                if d < best.0 {
                    best = (d, i);
                }
            }
            *votes[l].entry(best.1).or_insert(0) += 1;
        }
    }
    Ok(votes
        .into_iter()
        .map(|tally| {
            // BTreeMap iterates in ascending index, so the first maximum wins ties.
            let max = tally.values().copied().max().unwrap_or(0);
            tally.into_iter().find(|&(_, c)| c == max).map(|(i, _)| i).unwrap_or(0)
        })
        .collect())
}

/// How vertex confidence weighs the normal's z component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMode {
    /// `α = m · (1 − n_z)`.
    #[default]
    AsWritten,
    /// `α = m · n_z`: camera-facing vertices are trusted most.
    FacingCamera,
}

/// Per-vertex confidence in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexConfidence(Vec<f64>);

impl VertexConfidence {
    /// Clamps every value into `[0, 1]`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vertex confidence"));
        }
        Ok(Self(values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()))
    }

    pub fn constant(vertex_count: usize, value: f64) -> Self {
        Self(vec![value.clamp(0.0, 1.0); vertex_count])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Mask sampled bilinearly at the projected vertices (pixel coordinates),
/// times the normal term of `mode`.
pub fn vertex_confidence(
    mask: &Mask,
    projected: &[Point2],
    normals_z: &[f64],
    mode: ConfidenceMode,
) -> Result<VertexConfidence> {
    if projected.len() != normals_z.len() {
        return Err(Error::shape("vertex normals", projected.len(), normals_z.len()));
    }
    let values = projected
        .iter()
        .zip(normals_z)
        .map(|(p, &nz)| {
            let m = sample_bilinear(mask.as_image(), p.x, p.y)?[0];
            let facing = match mode {
                ConfidenceMode::AsWritten => 1.0 - nz,
                ConfidenceMode::FacingCamera => nz,
            };
            Ok(m * facing)
        })
        .collect::<Result<Vec<_>>>()?;
    VertexConfidence::new(values)
}

/// Bilinear samples of a 3-channel image at pixel positions, flattened vertex-major.
pub fn sample_vertex_colors(img: &Image, projected: &[Point2]) -> Result<Vec<f64>> {
    if img.channels() != 3 {
        return Err(Error::shape(
            "vertex color image",
            "3 channels",
            format!("{} channels", img.channels()),
        ));
    }
    let mut out = Vec::with_capacity(3 * projected.len());
    for p in projected {
        out.extend(sample_bilinear(img, p.x, p.y)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureFit {
    pub z: Vec<f64>,
    /// `B z + μ`, flattened vertex-major.
    pub colors: Vec<f64>,
}

/// Confidence-weighted ridge fit of the color basis:
/// `min ‖(B ∘ A) z − (c_p − μ) ∘ a‖² + λ²‖z‖²`, solved through the normal equations.
pub fn fit_texture_coeffs(
    model: &MorphableModel,
    projected_colors: &[f64],
    alpha: &VertexConfidence,
    lambda_ridge: f64,
) -> Result<TextureFit> {
    let (v, p) = (model.vertex_count, model.coeff_count);
    if projected_colors.len() != 3 * v {
        return Err(Error::shape("projected colors", 3 * v, projected_colors.len()));
    }
    if alpha.0.len() != v {
        return Err(Error::shape("vertex confidence", v, alpha.0.len()));
    }
    if !(lambda_ridge >= 0.0 && lambda_ridge.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ridge weight must be non-negative, got {lambda_ridge}"
        )));
    }
    if projected_colors.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("projected colors"));
    }
    // Accumulate in fixed row blocks so the sum order does not depend on scheduling.
    const BLOCK: usize = 1024;
    let rows = 3 * v;
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..rows.div_ceil(BLOCK))
        .into_par_iter()
        .map(|blk| {
            let mut ata = vec![0.0; p * p];
            let mut atb = vec![0.0; p];
            for r in blk * BLOCK..((blk + 1) * BLOCK).min(rows) {
                let a = alpha.0[r / 3];
                let a2 = a * a;
                if a2 == 0.0 {
                    continue;
                }
                let b = &model.color_basis[r * p..(r + 1) * p];
                let resid = projected_colors[r] - model.mean_colors[r];
                for i in 0..p {
                    let bi = a2 * b[i];
                    atb[i] += bi * resid;
                    for j in i..p {
                        ata[i * p + j] += bi * b[j];
                    }
                }
            }
            (ata, atb)
        })
        .collect();
    let mut ata = vec![0.0; p * p];
    let mut atb = vec![0.0; p];
    for (m, b) in partials {
        ata.iter_mut().zip(m).for_each(|(a, v)| *a += v);
        atb.iter_mut().zip(b).for_each(|(a, v)| *a += v);
    }
    for i in 0..p {
        for j in 0..i {
            ata[i * p + j] = ata[j * p + i];
        }
        ata[i * p + i] += lambda_ridge * lambda_ridge;
    }
    let z = if p == 0 {
        Vec::new()
    } else {
        SquareMatrix::from_row_major(p, ata)?.lu()?.solve(&atb)
    };
    let colors = (0..rows)
        .map(|r| model.mean_colors[r] + dot(&model.color_basis[r * p..(r + 1) * p], &z))
        .collect();
    Ok(TextureFit { z, colors })
}

/// `c_p ∘ a + c_b ∘ (1 − a)` with `a` repeated over the three channels.
pub fn blend_vertex_colors(projected: &[f64], basis: &[f64], alpha: &VertexConfidence) -> Result<Vec<f64>> {
    if projected.len() != basis.len() {
        return Err(Error::shape("basis colors", projected.len(), basis.len()));
    }
    if projected.len() != 3 * alpha.0.len() {
        return Err(Error::shape("vertex confidence", projected.len() / 3, alpha.0.len()));
    }
    Ok(projected
        .iter()
        .zip(basis)
        .enumerate()
        .map(|(r, (cp, cb))| {
            let a = alpha.0[r / 3];
            cp * a + cb * (1.0 - a)
        })
        .collect())
}

/// A deterministic face-like model for tests and benchmarks: a `rows × cols`
/// grid on a forward bulging cap (x in `[−1, 1]`, y in `[−1.25, 1.25]`, facing
/// +z), Gaussian shape and color bases, and `landmarks` distinct interior
/// landmark vertices.
pub fn synthetic_face_model(
    rows: usize,
    cols: usize,
    coeffs: usize,
    landmarks: usize,
    seed: u64,
) -> Result<MorphableModel> {
    if rows < 3 || cols < 3 {
        return Err(Error::InvalidArgument(format!(
            "synthetic grid must be at least 3x3, got {rows}x{cols}"
        )));
    }
    if landmarks > (rows - 2) * (cols - 2) {
        return Err(Error::InvalidArgument(format!(
            "{landmarks} landmarks do not fit a {rows}x{cols} grid"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = move |sd: f64| -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        sd * z
    };
    let v = rows * cols;
    let mut mean_positions = Vec::with_capacity(3 * v);
    for r in 0..rows {
        for c in 0..cols {
            let x = -1.0 + 2.0 * c as f64 / (cols - 1) as f64;
            let y = 1.25 - 2.5 * r as f64 / (rows - 1) as f64;
            let z = 0.6 * (1.0 - 0.45 * x * x - 0.3 * (y / 1.25).powi(2));
            mean_positions.extend([x, y, z]);
        }
    }
    let mut basis = |sd: f64, len: usize| (0..len).map(|_| gauss(sd)).collect::<Vec<_>>();
    let basis_x = basis(0.02, v * coeffs);
    let basis_y = basis(0.02, v * coeffs);
    let basis_z = basis(0.02, v * coeffs);
    let color_basis = basis(0.05, 3 * v * coeffs);
    let mean_colors = basis(0.1, 3 * v)
        .into_iter()
        .map(|d| (0.5 + d).clamp(0.1, 0.9))
        .collect();
    let mut triangles = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            let (a, b) = (r * cols + c, r * cols + c + 1);
            let (d, e) = (a + cols, b + cols);
            // Row index grows downward (decreasing y), so this winding is
            // counter-clockwise seen from +z.
            triangles.push([a, d, b]);
            triangles.push([b, d, e]);
        }
    }
    let mut interior: Vec<usize> = (1..rows - 1)
        .flat_map(|r| (1..cols - 1).map(move |c| r * cols + c))
        .collect();
    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for i in 0..landmarks {
        let j = pick.random_range(i..interior.len());
        interior.swap(i, j);
    }
    interior.truncate(landmarks);
    MorphableModel::new(ModelParts {
        vertex_count: v,
        coeff_count: coeffs,
        mean_positions,
        basis_x,
        basis_y,
        basis_z,
        mean_colors,
        color_basis,
        landmark_vertices: interior,
        triangles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_model() -> MorphableModel {
        MorphableModel::new(ModelParts {
            vertex_count: 1,
            coeff_count: 1,
            mean_positions: vec![0.1, -0.2, 0.3],
            basis_x: vec![0.5],
            basis_y: vec![0.25],
            basis_z: vec![-1.0],
            mean_colors: vec![0.5; 3],
            color_basis: vec![0.1, 0.2, 0.3],
            landmark_vertices: vec![0],
            triangles: vec![],
        })
        .unwrap()
    }

    #[test]
    fn toy_projection_matches_matrix_pipeline() {
        let cam = CameraParams {
            translation: [0.05, 0.1, -20.0],
            scale: 2.0,
            ..Default::default()
        };
        let v = project_landmark_vertices(&toy_model(), &[0.2], &cam).unwrap();
        assert!((v[0].x - 2.597739159718487e-01).abs() < 1e-12);
        assert!((v[0].y + 1.154550737652661e-01).abs() < 1e-12);
    }

    #[test]
    fn pixel_ndc_round_trip() {
        let p = Point2::new(13.25, 200.5);
        let q = ndc_to_pixel(pixel_to_ndc(p, 224, 224), 224, 224);
        assert!((p - q).norm() < 1e-12);
        assert_eq!(pixel_to_ndc(Point2::new(111.5, 111.5), 224, 224), Point2::ZERO);
    }

    #[test]
    fn camera_plane_is_degenerate() {
        let cam = CameraParams::default();
        assert!(matches!(
            cam.project([0.0, 0.0, 0.0], 3),
            Err(Error::DegenerateProjection { index: 3, .. })
        ));
    }

    #[test]
    fn blend_midpoint() {
        let a = VertexConfidence::constant(1, 0.5);
        assert_eq!(blend_vertex_colors(&[0.2; 3], &[0.6; 3], &a).unwrap(), vec![0.4; 3]);
    }
}

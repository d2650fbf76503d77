//! `MMB1` morphable-model files.
//!
//! Magic `MMB1`, then little-endian `u32` V, p, n_landmarks, triangle_count,
//! then little-endian `f32` arrays μ_pos (3V), B^x (V·p), B^y, B^z, μ_col (3V),
//! B_col (3V·p), then `u32` landmark indices (n) and triangles (3·count).
//! Matrices are row-major; positions and colors are vertex-major.

use std::path::Path;

use facewarp_core::mmfit::{ModelParts, MorphableModel};

use super::{read_bytes, write_bytes, Reader};
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"MMB1";

fn widen(v: Vec<f32>) -> Vec<f64> {
    v.into_iter().map(f64::from).collect()
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<MorphableModel> {
    let mut r = Reader::new(path, bytes);
    r.magic(MAGIC)?;
    let (v, p, n, t) = (
        r.u32()? as usize,
        r.u32()? as usize,
        r.u32()? as usize,
        r.u32()? as usize,
    );
    let vp = v
        .checked_mul(p)
        .ok_or_else(|| CliError::parse(path, "model dimensions overflow"))?;
    let mean_positions = widen(r.f32s(3 * v)?);
    let basis_x = widen(r.f32s(vp)?);
    let basis_y = widen(r.f32s(vp)?);
    let basis_z = widen(r.f32s(vp)?);
    let mean_colors = widen(r.f32s(3 * v)?);
    let color_basis = widen(r.f32s(3 * vp)?);
    let landmark_vertices = r.u32s(n)?.into_iter().map(|i| i as usize).collect();
    let triangles = r
        .u32s(3 * t)?
        .chunks_exact(3)
        .map(|c| [c[0] as usize, c[1] as usize, c[2] as usize])
        .collect();
    r.expect_end()?;
    MorphableModel::new(ModelParts {
        vertex_count: v,
        coeff_count: p,
        mean_positions,
        basis_x,
        basis_y,
        basis_z,
        mean_colors,
        color_basis,
        landmark_vertices,
        triangles,
    })
    .map_err(|e| CliError::parse(path, e))
}

/// Values are narrowed to `f32`.
pub fn encode(model: &MorphableModel) -> Vec<u8> {
    let parts = model.clone().into_parts();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for n in [
        parts.vertex_count,
        parts.coeff_count,
        parts.landmark_vertices.len(),
        parts.triangles.len(),
    ] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for arr in [
        &parts.mean_positions,
        &parts.basis_x,
        &parts.basis_y,
        &parts.basis_z,
        &parts.mean_colors,
        &parts.color_basis,
    ] {
        for &x in arr.iter() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    for &i in &parts.landmark_vertices {
        out.extend_from_slice(&(i as u32).to_le_bytes());
    }
    for t in &parts.triangles {
        for &i in t {
            out.extend_from_slice(&(i as u32).to_le_bytes());
        }
    }
    out
}

pub fn read(path: &Path) -> Result<MorphableModel> {
    decode(path, &read_bytes(path)?)
}

pub fn write(path: &Path, model: &MorphableModel) -> Result<()> {
    write_bytes(path, &encode(model))
}

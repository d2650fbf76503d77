//! `FLW1`: magic, `u32` width and height, then `f32` `(dx, dy)` pairs row-major, all little-endian.

use std::path::Path;

use facewarp_core::{FlowField, Point2};

use super::{read_bytes, write_bytes, Reader};
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"FLW1";

pub fn encode(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * flow.vectors().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(flow.width() as u32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as u32).to_le_bytes());
    for d in flow.vectors() {
        out.extend_from_slice(&(d.x as f32).to_le_bytes());
        out.extend_from_slice(&(d.y as f32).to_le_bytes());
    }
    out
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<FlowField> {
    let mut r = Reader::new(path, bytes);
    r.magic(MAGIC)?;
    let (w, h) = (r.u32()? as usize, r.u32()? as usize);
    let n = w
        .checked_mul(h)
        .ok_or_else(|| CliError::parse(path, "flow dimensions overflow"))?;
    let raw = r.f32s(2 * n)?;
    r.expect_end()?;
    let vectors = raw
        .chunks_exact(2)
        .map(|c| Point2::new(c[0] as f64, c[1] as f64))
        .collect();
    FlowField::new(w, h, vectors).map_err(|e| CliError::parse(path, e))
}

pub fn read(path: &Path) -> Result<FlowField> {
    decode(path, &read_bytes(path)?)
}

pub fn write(path: &Path, flow: &FlowField) -> Result<()> {
    write_bytes(path, &encode(flow))
}

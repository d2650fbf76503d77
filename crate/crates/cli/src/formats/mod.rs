//! On-disk formats: landmark JSON, PNG images, MMB1 morphable models and FLW1 flow fields.

pub mod flow;
pub mod landmarks;
pub mod mmb;
pub mod png;

use std::path::Path;

use crate::error::{CliError, Result};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Little-endian cursor over a binary file, reporting truncation as a parse error.
pub(crate) struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Self { path, bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                CliError::parse(
                    self.path,
                    format!("truncated file: needed {n} bytes at offset {}", self.pos),
                )
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != want {
            return Err(CliError::parse(
                self.path,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(want)
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| CliError::parse(self.path, "array size overflows"))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub(crate) fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| CliError::parse(self.path, "array size overflows"))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub(crate) fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(CliError::parse(
                self.path,
                format!(
                    "{} trailing bytes after the declared contents",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        Ok(())
    }
}

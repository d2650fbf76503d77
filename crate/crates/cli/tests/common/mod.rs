#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use facewarp_cli::formats::png;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn facewarp<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_facewarp"))
        .args(args)
        .output()
        .expect("facewarp binary runs")
}

/// Runs and asserts success, echoing stderr on failure.
pub fn facewarp_ok<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = facewarp(args);
    assert!(
        out.status.success(),
        "facewarp failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// 8-bit sample values of a PNG.
pub fn levels(path: &Path) -> Vec<u8> {
    png::read(path)
        .unwrap()
        .samples()
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

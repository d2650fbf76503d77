use thiserror::Error;

/// Coarse classification of an [`Error`], used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or out-of-domain input values.
    Input,
    /// Sizes or counts that do not agree.
    Shape,
    /// A numerical procedure failed (singular system, divergence, no convergence).
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("control points {first} and {second} coincide at ({x}, {y})")]
    DuplicatePoints {
        first: usize,
        second: usize,
        x: f64,
        y: f64,
    },

    #[error("all {count} control points are collinear; the affine part of the spline is undetermined")]
    CollinearPoints { count: usize },

    #[error("singular linear system of size {size} (pivot ratio {pivot_ratio:.3e})")]
    SingularSystem { size: usize, pivot_ratio: f64 },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("optimization diverged at iteration {iteration}: loss became non-finite")]
    Diverged { iteration: usize },

    #[error("projected point {index} lies on the camera plane (w = {w:.3e})")]
    DegenerateProjection { index: usize, w: f64 },

    #[error("landmark detector failed: {0}")]
    Detector(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonFinite(_) | Error::InvalidArgument(_) | Error::Detector(_) => ErrorKind::Input,
            Error::ShapeMismatch { .. } => ErrorKind::Shape,
            Error::DuplicatePoints { .. }
            | Error::CollinearPoints { .. }
            | Error::SingularSystem { .. }
            | Error::NoConvergence { .. }
            | Error::Diverged { .. }
            | Error::DegenerateProjection { .. } => ErrorKind::Numerical,
        }
    }

    pub(crate) fn shape(what: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            what,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

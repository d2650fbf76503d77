use std::path::{Path, PathBuf};

use facewarp_core::ErrorKind;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },

    /// Inputs that parse but do not fit together (sizes, counts, channel layouts).
    #[error("{0}")]
    Contract(String),

    #[error(transparent)]
    Core(#[from] facewarp_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(path: &Path, msg: impl ToString) -> Self {
        CliError::Parse {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        }
    }

    /// 1 for I/O and parse failures, 2 for contract violations, 3 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } | CliError::Parse { .. } => 1,
            CliError::Contract(_) => 2,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Input | ErrorKind::Shape => 2,
                ErrorKind::Numerical => 3,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

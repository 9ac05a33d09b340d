use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = JnetError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum JnetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("no usable terms")]
    NoUsableTerms,

    #[error("not enough items: {0}")]
    Insufficient(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("corrupted checkpoint file {file}: {msg}")]
    Checkpoint { file: String, msg: String },
}

impl JnetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Numerical failures map to exit code 2, everything else to 1.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::Singular(_) | Self::NonFinite(_))
    }
}

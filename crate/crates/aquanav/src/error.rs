//! Error types shared across the toolkit.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller misused an API: wrong action space, step after done, empty batch, ...
    #[error("usage error: {0}")]
    Usage(String),

    /// A config or input file failed validation.
    #[error("validation error: {0}")]
    Validation(String),

    /// Dimensions or shapes disagree between two structures.
    #[error("structural error: {0}")]
    Structural(String),

    /// A file could not be parsed; `offset` is the byte offset of the failure.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// A numeric input was out of its declared domain or non-finite.
    #[error("input error: {0}")]
    Input(String),

    /// The operation is not supported for this artifact (e.g. tanh in the verifier).
    #[error("capability error: {0}")]
    Capability(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the CLI: 1 usage, 2 validation, 3 capability, 4 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Validation(_) | Error::Structural(_) | Error::Parse { .. } | Error::Input(_) => 2,
            Error::Capability(_) => 3,
            Error::Io { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

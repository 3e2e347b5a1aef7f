use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training error at step {step}: {message}")]
    Training { step: u64, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("magic mismatch in {path}: expected {expected:?}, found {found:?}")]
    MagicMismatch {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("truncated file {path}: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("dimension overflow in {path}: {message}")]
    DimOverflow { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension(_)
            | Error::Validation(_)
            | Error::Usage(_)
            | Error::Config(_)
            | Error::EmptyResult(_) => 1,
            Error::Training { .. } | Error::Numerical(_) => 2,
            Error::MagicMismatch { .. }
            | Error::Truncated { .. }
            | Error::DimOverflow { .. }
            | Error::Io { .. }
            | Error::Json { .. } => 3,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library. The CLI maps [`I2pError::is_usage`] variants
/// to exit code 2 and everything else to exit code 1.
#[derive(Debug, Error)]
pub enum I2pError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cholesky factorization failed at pivot {pivot}")]
    NotPositiveDefinite { pivot: usize },

    #[error("layer {layer}: curvature matrix not positive definite even at damping {damping:e}")]
    DampingExhausted { layer: String, damping: f64 },

    #[error("unknown layer identifier `{0}`")]
    UnknownLayer(String),

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("dataset must contain both classes: {0}")]
    SingleClass(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("malformed {kind} file: {detail}")]
    Format { kind: &'static str, detail: String },

    #[error("truncated {kind} file: expected {expected} bytes of payload, found {found}")]
    Truncated {
        kind: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl I2pError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        I2pError::Io {
            path: path.into(),
            source,
        }
    }

    /// Environment or usage problems (missing files, unwritable paths).
    pub fn is_usage(&self) -> bool {
        matches!(self, I2pError::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, I2pError>;

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("{op}: dimension mismatch: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// Tensors from two different graphs were combined.
    #[error("{0}: tensors belong to different graphs")]
    GraphMismatch(&'static str),

    /// The requested differentiation is not supported by the engine.
    #[error("unsupported differentiation: {0}")]
    Unsupported(String),

    /// A NaN or infinity appeared in a computed value.
    #[error("non-finite value in {term} at step {step}")]
    NonFinite { term: String, step: u64 },

    /// A numerical routine failed to produce a usable result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Invalid argument or configuration value.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A dataset violates one of its structural invariants.
    #[error("dataset invariant violated: {0}")]
    Invariant(String),

    /// A dataset file does not match its documented schema.
    #[error("schema error in {path}: {detail}")]
    Schema { path: PathBuf, detail: String },

    /// A text file could not be parsed.
    #[error("parse error in {path} at line {line}: {detail}")]
    Parse {
        path: PathBuf,
        line: u64,
        detail: String,
    },

    /// A binary model or checkpoint file is malformed.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HorizonError {
    /// Tensor extents do not line up (channel mismatch, spatial mismatch, ...).
    #[error("shape error: {0}")]
    Shape(String),

    /// An argument violates an operation precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A file is structurally broken (bad magic, truncated payload, ...).
    #[error("corrupt file {path}: {detail}")]
    Corrupt { path: String, detail: String },

    /// Data loaded fine but violates a domain invariant (non-finite amplitude,
    /// probability outside [0,1], ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A metric has no defined value (no common columns, empty truth, ...).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Training hit a non-finite loss.
    #[error("training aborted: non-finite loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    /// An internal invariant was broken (missing gradient for a learnable
    /// parameter, repeated backward, ...).
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HorizonError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        HorizonError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn corrupt(path: impl Into<String>, detail: impl Into<String>) -> Self {
        HorizonError::Corrupt {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, HorizonError>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every fallible operation in the crate reports one of these.
#[derive(Debug, Error)]
pub enum Error {
    /// A value violates a documented precondition or invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Tensor or volume dimensions do not fit the operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// A file parsed but its contents are malformed.
    #[error("format error in {field}: {detail}")]
    Format { field: String, detail: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Training or inference produced non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Aggregated configuration problems, one entry per offending key.
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format { field: field.into(), detail: detail.into() }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}

macro_rules! validation_err {
    ($($arg:tt)*) => { $crate::error::Error::Validation(format!($($arg)*)) };
}

pub(crate) use shape_err;
pub(crate) use validation_err;

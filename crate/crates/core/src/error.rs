use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("dimension must be positive")]
    EmptyDim,

    #[error("invalid label {0}: expected 0 or 1")]
    InvalidLabel(i64),

    #[error("invalid {field}: {reason}")]
    InvalidField { field: String, reason: String },

    #[error("no records")]
    NoRecords,

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("single-label data: {0}")]
    SingleLabel(String),

    #[error("non-finite {what} at sample {id}")]
    NumericalAbort { id: String, what: String },

    #[error("dropout mask required in train mode")]
    MissingMask,

    #[error("record {0} carries no semantic feature")]
    MissingSemantic(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidField {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures caused by the NaN/Inf abort policy.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NumericalAbort { .. })
    }
}

pub(crate) fn check_dims(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::DimMismatch { left, right });
    }
    Ok(())
}

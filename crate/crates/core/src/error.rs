use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("value error: {0}")]
    Value(String),

    #[error("domain index {index} out of range for a bank of {len}")]
    DomainIndex { index: usize, len: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("checkpoint does not match network spec: {0}")]
    SpecMismatch(String),

    #[error("non-finite loss at step {step} (first non-finite value in {layer})")]
    NumericalAbort { step: usize, layer: String },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn parse(offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }

    /// Process exit code for command-line use: 2 config, 3 data, 4 numerical, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Json(_) | Error::Contract(_) | Error::Lookup(_) => 2,
            Error::Parse { .. }
            | Error::UnsupportedVersion { .. }
            | Error::MissingData(_)
            | Error::SpecMismatch(_)
            | Error::Io(_)
            | Error::Csv(_) => 3,
            Error::NumericalAbort { .. } | Error::Value(_) => 4,
            Error::Shape(_) | Error::DomainIndex { .. } => 1,
        }
    }
}

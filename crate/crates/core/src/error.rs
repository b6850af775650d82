use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("softmax row does not sum to one (sum = {sum})")]
    MalformedSoftmax { sum: f64 },

    #[error("not enough samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("output file {0} already exists")]
    AlreadyExists(PathBuf),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("digest mismatch: file is corrupt or truncated")]
    Digest,

    #[error("tensor shape inconsistent with model spec: {0}")]
    Shape(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by numerical trouble rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Divergence(_) | Error::MalformedSoftmax { .. })
    }
}

use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("tape corruption: {0}")]
    TapeCorruption(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("gradient oracle invalid: {0}")]
    OracleInvalid(String),

    #[error("batch assembly failed for example {index}: {reason}")]
    Assembly { index: usize, reason: String },

    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: u64, reason: String },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn non_finite(op: &str) -> Self {
        Error::NonFinite { op: op.to_string() }
    }

    /// True for errors caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Divergence { .. })
    }
}

/// Failures while reading a checkpoint file. Each corruption mode has its own
/// variant so callers can tell a truncated copy from a foreign file.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}, not a checkpoint")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("checkpoint manifest disagrees with payload: {0}")]
    Manifest(String),

    #[error("checkpoint header is not valid: {0}")]
    Header(String),
}

use thiserror::Error;

use crate::protocol::PartyId;

/// Failures raised by the Paillier layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeError {
    #[error("key size {bits} is below the minimum of {min} bits")]
    KeyTooSmall { bits: usize, min: usize },
    #[error("key size must be even and at least 16 bits, got {0}")]
    InvalidKeySize(usize),
    #[error("value {0} is not finite")]
    NonFinite(f64),
    #[error("encoding overflow: value does not fit in the plaintext range")]
    Overflow,
    #[error("ciphertext length mismatch: expected {expected} bytes, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("ciphertext value is outside (0, n^2)")]
    InvalidCiphertext,
    #[error("malformed key block: {0}")]
    MalformedKey(String),
}

/// Shape and routing failures in the training protocol.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    He(#[from] HeError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty vector")]
    Empty,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("label encoding mismatch: {0}")]
    Labels(String),
    #[error("missing forward shares for iteration {iteration}: have {have}, need {need}")]
    MissingShares {
        iteration: u32,
        have: usize,
        need: usize,
    },
    #[error("gradient for {expected} delivered to {actual}")]
    Misrouted { expected: PartyId, actual: PartyId },
    #[error("degenerate label set: need at least one positive and one negative")]
    DegenerateLabels,
    #[error("invalid duration {0}: must be non-negative and finite")]
    NegativeDuration(f64),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Dataset ingestion and partitioning failures.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("duplicate id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("party alignment mismatch: {0}")]
    Alignment(String),
    #[error("invalid shape: {0}")]
    Shape(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("label `{0}` appears more than once")]
    LabelCollision(String),
    #[error("unknown subsystem label `{0}`")]
    UnknownLabel(String),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("numerical inconsistency: {0}")]
    NumericalInconsistency(String),
    #[error("dimension mismatch: {0}")]
    DimensionError(String),
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("partition error: {0}")]
    PartitionError(String),
    #[error("register error: {0}")]
    RegisterError(String),
    #[error("enumeration of {count} deterministic strategies exceeds the guard of {limit}")]
    TooLargeToEnumerate { count: u128, limit: u128 },
    #[error("dense dimension {dim} exceeds the cap of {cap}")]
    TooLargeToMaterialize { dim: usize, cap: usize },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
    #[error("invalid instrument: {0}")]
    InvalidInstrument(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

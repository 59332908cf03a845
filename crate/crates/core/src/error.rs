use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm is numerically zero")]
    ZeroVector,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("rows are rank deficient: numerical rank {rank} < {expected}")]
    RankDeficient { rank: usize, expected: usize },
    #[error("invalid dimensions: subspace dimension {subspace} must be below embedding dimension {embedding}")]
    InvalidDims { subspace: usize, embedding: usize },
    #[error("empty batch statistics")]
    EmptyBatch,
    #[error("target distribution is invalid: {0}")]
    InvalidTarget(String),
    #[error("center bank does not match the loss head: {0}")]
    BankMismatch(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("empty input")]
    EmptyInput,
    #[error("both classes need at least one score")]
    EmptyClass,
    #[error("partial AUC bound p={0} outside (0, 1]")]
    InvalidP(f64),
    #[error("waveform too short: {len} samples, need {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("malformed data: {0}")]
    Data(String),
    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("audio decode error: {0}")]
    Audio(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by the configuration rather than by data or I/O.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::ConfigInvalid(_) | Error::InvalidDims { .. } | Error::InvalidSpec(_) | Error::InvalidP(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

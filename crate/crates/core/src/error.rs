use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IceError {
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("class {0} has no member embeddings")]
    EmptyClass(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("bad magic bytes (expected \"ICEB\")")]
    BadMagic,
    #[error("unsupported bundle version {0}")]
    VersionUnsupported(u32),
    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("invalid ablation axis: {0}")]
    InvalidAxis(String),
    #[error("invalid ablation value: {0}")]
    InvalidValue(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("manifest JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, IceError>;

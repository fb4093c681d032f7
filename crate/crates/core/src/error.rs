use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric positive definite (all jitter levels failed)")]
    NonSpd,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("non-finite loss")]
    NonFiniteLoss,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dense jacobian needs {needed} bytes, cap is {cap}")]
    JacobianTooLarge { needed: usize, cap: usize },

    #[error("momentum directions are degenerate (previous step parallel to the LM step)")]
    DegenerateDirections,

    #[error("every line-search probe produced a non-finite loss")]
    AllNonFinite,

    #[error("conjugate gradient breakdown: p'Ap = {0}")]
    CgBreakdown(f64),

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("{path}: bad IDX magic {found} (expected {expected})")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{0}: truncated IDX file")]
    TruncatedFile(PathBuf),

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("subset of {requested} requested from {available} samples")]
    SubsetTooLarge { requested: usize, available: usize },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },

    #[error("line {line}: unknown value `{value}` for `{key}`")]
    UnknownValue {
        line: usize,
        key: String,
        value: String,
    },

    #[error("line {line}: `{key}` expects {expected}, got `{value}`")]
    Type {
        line: usize,
        key: String,
        expected: &'static str,
        value: String,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{0}: no data rows")]
    EmptyCsv(PathBuf),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad user configuration rather than by the run itself.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::UnknownKey { .. }
                | Error::UnknownValue { .. }
                | Error::Type { .. }
                | Error::InvalidConfig(_)
        )
    }
}

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SvbError {
    #[error("grid mismatch: expected length {expected}, got {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("empty fuzzy set: logical probability is zero (label {label:?})")]
    EmptyFuzzySet { label: Option<usize> },

    #[error("negative distortion {value} at index {index}")]
    NegativeDistortion { index: usize, value: f64 },

    #[error("likelihood ratio is zero everywhere")]
    ZeroRatio,

    #[error("source symbol {index} is unreachable under every label")]
    UnreachableSource { index: usize },

    #[error("absolute continuity violated at index {index}: p = {p}, q = 0")]
    AbsoluteContinuity { index: usize, p: f64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    #[error("invalid truth values: {0}")]
    InvalidTruth(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("predictive mass vanished at index {index}")]
    VanishedDenominator { index: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
}

pub type Result<T> = std::result::Result<T, SvbError>;

use thiserror::Error;

use crate::gaussian::Frame;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid depth {0}: must be finite and > 0")]
    InvalidDepth(f64),

    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid gaussian: {0}")]
    InvalidGaussian(String),

    #[error("degenerate gaussian: covariance condition number {0:e} exceeds 1e12")]
    DegenerateGaussian(f64),

    #[error("invalid label {label}: expected 1..={max}")]
    InvalidLabel { label: usize, max: usize },

    #[error("frame mismatch: expected {expected:?} frame, got {actual:?}")]
    FrameMismatch { expected: Frame, actual: Frame },

    #[error("class count mismatch: expected {expected}, got {actual}")]
    ClassCountMismatch { expected: usize, actual: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("undefined loss: no valid items")]
    UndefinedLoss,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

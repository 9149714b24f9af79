use thiserror::Error;

/// Errors raised by the simulation and verification routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid eigenvalue at index {index}: {reason}")]
    InvalidEigenvalue { index: usize, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("mode level {level} out of range for a basis of dimension {dim}")]
    ModeOutOfRange { level: usize, dim: usize },

    #[error("initial state lies outside the closed unit ball (|x|_H = {norm})")]
    OutsideBall { norm: f64 },

    #[error("non-finite state after step {step}: the scheme diverged")]
    Diverged { step: usize },

    #[error("noise map has no pseudo-inverse on the low modes")]
    PseudoInverseUnavailable,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("only {0} usable points for an exponential fit (need at least 3)")]
    TooFewPoints(usize),

    #[error("path {index} failed: {message}")]
    PathFailed { index: usize, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

use thiserror::Error;

/// Errors raised by the transport solvers and their building blocks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("negative entry in {what} at index {index}")]
    NegativeInput { what: &'static str, index: usize },

    #[error("non-finite iterate at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    #[error("epsilon {epsilon:e} is below the plain solver limit {limit:e}; use the stabilized solver")]
    EpsilonTooSmall { epsilon: f64, limit: f64 },

    #[error("index {index} out of range for a space of size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("map {map} is not surjective: point {point} has no preimage")]
    NotSurjective { map: usize, point: usize },

    #[error("flow step {step} failed: {source}")]
    FlowStep { step: usize, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::DimensionMismatch(format!(
            "{what} has length {got}, expected {expected}"
        )));
    }
    Ok(())
}

pub(crate) fn check_nonnegative(what: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !(*v >= 0.0)) {
        Some(index) => Err(Error::NegativeInput { what, index }),
        None => Ok(()),
    }
}

pub(crate) fn check_positive(what: &str, value: f64) -> Result<()> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "{what} must be positive and finite, got {value}"
        )));
    }
    Ok(())
}

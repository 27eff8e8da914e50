use thiserror::Error;

use crate::spatial::{Frame, Kind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("frame mismatch: expected {expected}, found {found}")]
    FrameMismatch { expected: Frame, found: Frame },

    #[error("kind mismatch: expected {expected:?}, found {found:?}")]
    KindMismatch { expected: Kind, found: Kind },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid gain {name}: {reason}")]
    InvalidGain { name: String, reason: String },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("joint-space inertia matrix is not positive definite")]
    SingularInertia,

    #[error("non-finite value in {what} at t = {t}")]
    NonFinite { t: f64, what: String },

    #[error("non-uniform sampling at sample {index}: step {step} differs from {dt}")]
    NonUniformSampling { index: usize, step: f64, dt: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

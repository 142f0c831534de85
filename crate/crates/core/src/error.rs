use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible mask: {0}")]
    InfeasibleMask(String),

    #[error("mask calibration failed after {attempts} attempts (achieved R = {achieved:.3}, requested {requested:.3})")]
    Calibration {
        attempts: usize,
        achieved: f64,
        requested: f64,
    },

    #[error("non-finite value at sampler step t = {step}")]
    NonFinite { step: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("coil {coil}: {source}")]
    Coil {
        coil: usize,
        #[source]
        source: Box<Error>,
    },
}

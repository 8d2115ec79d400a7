use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("coupling condition inconsistent on {which}: {lhs} != {rhs}")]
    CouplingInconsistent { which: &'static str, lhs: f64, rhs: f64 },

    #[error("mass condition fails: upper bound τ₂ unavailable")]
    MassCondition,

    #[error("covariance matrix not positive definite at row {row}")]
    NotPositiveDefinite { row: usize },

    #[error("grid mismatch: expected {expected} points, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("quadrature failed to converge: {0}")]
    Quadrature(String),

    #[error("negative solution value {value:e} at t = {t}")]
    NonPositivity { t: f64, value: f64 },

    #[error("sub-step collapsed to {dt:e} at t = {t} before reaching the blow-up threshold")]
    StepCollapse { t: f64, dt: f64 },

    #[error("{0} is not applicable: {1}")]
    Inapplicable(&'static str, String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("non-finite value in input field")]
    NonFinite,
    #[error("frequency band out of range: {0}")]
    Band(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("derivative of order {order} exceeds profile capability {max}")]
    DerivativeOrder { order: usize, max: usize },
    #[error("metric not positive definite at {0:?}")]
    NotPositive(Vec<f64>),
    #[error("operator too large: {0}")]
    Budget(String),
    #[error("grid mismatch")]
    GridMismatch,
    #[error("scale mismatch: {0} vs {1}")]
    ScaleMismatch(f64, f64),
    #[error("unresolved: {0}")]
    Unresolved(String),
    #[error("step too large: {0}")]
    StepTooLarge(String),
    #[error("step underflow at t={0}")]
    StepUnderflow(f64),
    #[error("box too small: {0}")]
    BoxTooSmall(String),
    #[error("forbidden endpoint")]
    ForbiddenEndpoint,
    #[error("non-admissible pair: p={0}")]
    NonAdmissible(f64),
    #[error("left small-data regime: H^s norm {norm} exceeds {limit}")]
    LeftSmallData { norm: f64, limit: f64 },
    #[error("finite-difference breakdown: {0}")]
    FiniteDifference(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

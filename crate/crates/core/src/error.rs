use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("green table does not cover offset {0:?}")]
    TableCoverage(Vec<i64>),

    #[error("linear system is singular or ill-conditioned: {0}")]
    Singular(String),

    #[error("conjugate gradient did not converge: relative residual {residual:e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("insufficient precision: margin {margin:e} below {required:e}")]
    InsufficientPrecision { margin: f64, required: f64 },

    #[error("horizon too short: need {needed} steps, trace has {available}")]
    HorizonTooShort { needed: u64, available: u64 },

    #[error("memory guard: {sites} sites exceeds cap {cap}")]
    MemoryGuard { sites: u64, cap: u64 },

    #[error("safety horizon of {0} steps exceeded")]
    SafetyHorizon(u64),

    #[error("truncation bias bound {bound:e} exceeds tolerance {tolerance:e}")]
    TruncationBias { bound: f64, tolerance: f64 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("inconclusive: {0}")]
    Inconclusive(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}

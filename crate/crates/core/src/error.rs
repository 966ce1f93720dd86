use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hermitian: max deviation {deviation:.3e} exceeds tolerance {tolerance:.3e}")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:.3e} below -{tolerance:.3e}")]
    NotPositive { eigenvalue: f64, tolerance: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("jump index {index} out of range (system has {count} jump operators)")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("vanishing weight: trace {trace:.3e} at or below cutoff {cutoff:.3e}")]
    VanishingWeight { trace: f64, cutoff: f64 },

    #[error("integration step too large: trace drift {drift:.3e} in one step (limit {limit:.3e})")]
    StepTooLarge { drift: f64, limit: f64 },

    #[error("positivity violation during propagation: eigenvalue {eigenvalue:.3e} at t = {time}")]
    PositivityViolation { eigenvalue: f64, time: f64 },

    #[error("Fock truncation too small: {reason}")]
    TruncationTooSmall { reason: String },

    #[error("spatial grid too coarse: {reason}")]
    GridTooCoarse { reason: String },

    #[error("momentum-kick quadrature incommensurate with the grid: {reason}")]
    IncommensurateKick { reason: String },

    #[error("time {time} outside the shift grid range [0, {t_max}]")]
    GridRangeError { time: f64, t_max: f64 },

    #[error("non-finite entry encountered in {context}")]
    NonFinite { context: String },

    #[error("LAPACK routine {routine} failed with info = {info}")]
    Lapack { routine: &'static str, info: i32 },

    #[error("invalid model parameters: {0}")]
    InvalidModel(String),

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

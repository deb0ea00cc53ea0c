use thiserror::Error;

#[derive(Debug, Error)]
pub enum OsError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("basis is ill-conditioned: smallest Gram eigenvalue {0:.3e} below floor {1:.3e}")]
    IllConditionedBasis(f64, f64),

    #[error("no exact unital realization available: {0}")]
    NotUnitary(String),

    #[error("SDP solver failed: {0}")]
    Solver(String),

    #[error("kernel detection ambiguous: {0}")]
    AmbiguousKernel(String),

    #[error("inconsistent data: {0}")]
    Inconsistent(String),

    #[error("invalid input: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, OsError>;

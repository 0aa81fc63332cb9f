use thiserror::Error;

/// Errors raised by the numerical kernels, models and estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is rank deficient (numerical rank {0})")]
    RankDeficient(usize),

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("basis is not orthonormal (max deviation from identity {0:.3e})")]
    NotOrthonormal(f64),

    #[error("invalid model parameters: {0}")]
    InvalidModelParams(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("bounded-case rate needs the almost-sure norm bound b")]
    MissingBound,

    #[error("intrinsic dimension of a zero matrix is undefined")]
    ZeroMatrix,

    #[error("non-finite entry in matrix")]
    NonFinite,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("aggregate is degenerate (sigma_min of the averaged basis = {0:.3e})")]
    Degenerate(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

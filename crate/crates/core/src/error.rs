use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("time {t} outside of [0, {tau}]")]
    TimeOutOfDomain { t: f64, tau: f64 },

    #[error("degenerate interval: t = {t}, t' = {t_next}")]
    DegenerateInterval { t: f64, t_next: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("spectrum has negative eigenvalue {min} (tolerance {tol})")]
    NegativeSpectrum { min: f64, tol: f64 },

    #[error("circulant embedding still has negative eigenvalue {min} after {doublings} doublings")]
    EmbeddingFailed { min: f64, doublings: usize },

    #[error("covariance operator is singular")]
    SingularOperator,

    #[error("operation `{0}` is not supported by this covariance backing")]
    Unsupported(&'static str),

    #[error("all weights underflowed")]
    WeightUnderflow,

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("non-finite loss at step {step} (parameter norm {param_norm})")]
    NonFiniteLoss { step: usize, param_norm: f64 },

    #[error(
        "variogram fit did not converge after {iterations} iterations (best sill {sill}, length scale {length_scale})"
    )]
    FitNotConverged {
        iterations: usize,
        sill: f64,
        length_scale: f64,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

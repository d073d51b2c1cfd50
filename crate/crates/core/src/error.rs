use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unclassifiable variance function: {0}")]
    Unclassifiable(String),

    #[error("quadrature did not reach tolerance {tol:e} (estimate {estimate}, error bound {error:e})")]
    QuadratureFailure { tol: f64, estimate: f64, error: f64 },

    #[error("bond action is not of gradient type: {0}")]
    NonGradient(String),

    #[error("bond action is not degree preserving (residual {0:e})")]
    NotDegreePreserving(f64),

    #[error("degenerate quadratic coefficient a = {0:e}")]
    Degenerate(f64),

    #[error("fiber has {size} states, cap is {cap}")]
    FiberTooLarge { size: usize, cap: usize },

    #[error("bond rate {rate:e} exceeds cap {cap:e}")]
    RateOverflow { rate: f64, cap: f64 },

    #[error("invalid random walk: {0}")]
    InvalidWalk(String),

    #[error("integration failed: {0}")]
    IntegrationFailure(String),

    #[error("degenerate recentering: v2 = {0} <= -1")]
    DegenerateRecentering(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

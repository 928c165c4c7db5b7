use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("closest-point iteration did not converge after {iterations} iterations at ({x}, {y})")]
    NoConvergence { x: f64, y: f64, iterations: usize },

    #[error("projection of ({x}, {y}) is not unique: the point lies on the ridge")]
    AmbiguousProjection { x: f64, y: f64 },

    #[error("non-finite energy density at node {node}")]
    NonFiniteEnergy { node: usize },

    #[error("line search failed at iteration {iteration}")]
    LineSearchFailure { iteration: usize },

    #[error("minimizer stopped after {iterations} iterations with gradient norm {grad_norm:e}")]
    NotConverged { iterations: usize, grad_norm: f64 },

    #[error("entropy generator does not close on the circle (residual {residual:e})")]
    NonClosed { residual: f64 },

    #[error("adaptive quadrature failed to reach tolerance (error estimate {estimate:e})")]
    QuadratureFailure { estimate: f64 },

    #[error("angle {0} outside (0, pi)")]
    BetaOutOfRange(f64),

    #[error("characteristic stuck at the ridge at t = {t}")]
    StuckAtRidge { t: f64 },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input domain: {0}")]
    InputDomain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("no convergence after {iterations} iterations: {reason}")]
    NonConvergence {
        iterations: usize,
        reason: String,
        /// Successive-iterate distances, most recent last.
        history: Vec<f64>,
    },

    #[error("positivity violated: min value {min} at index {index}")]
    PositivityViolation { min: f64, index: usize },

    #[error("fit domain: {0}")]
    FitDomain(String),

    #[error("placement: {0}")]
    Placement(String),

    #[error("unsupported manifold: {0}")]
    UnsupportedManifold(String),

    #[error("spectral solver did not converge after {iterations} iterations (max residual {max_residual:.3e})")]
    SpectralSolver {
        iterations: usize,
        max_residual: f64,
        /// Ritz values of the final iterate.
        ritz_history: Vec<Vec<f64>>,
    },

    #[error("linear solve stagnated after {iterations} iterations (relative residual {residual:.3e})")]
    LinearSolve { iterations: usize, residual: f64 },

    #[error("contraction failure: {0}")]
    ContractionFailure(String),

    #[error("derivative unreliable: {0}")]
    DerivativeUnreliable(String),

    #[error("gradient inconsistency: finite-difference {fd:?} vs tangential {tangential:?}")]
    GradientInconsistency { fd: Vec<f64>, tangential: Vec<f64> },

    #[error("assembly: {0}")]
    Assembly(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("study aborted at eps = {eps}: {source}")]
    Study {
        eps: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

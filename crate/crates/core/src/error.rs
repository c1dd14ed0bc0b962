use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum RmdError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("under-identified: {included} included observations, need at least {required}")]
    UnderIdentified { included: usize, required: usize },

    #[error("empty inclusion subset: {0}")]
    EmptySubset(String),

    /// The optimizer ran out of iterations. `best` is the best point seen, in
    /// the natural parameterization of the family, with its log-likelihood.
    #[error("optimizer did not converge after {iterations} iterations (best loglik {best_loglik})")]
    ConvergenceFailure {
        iterations: usize,
        best: Vec<f64>,
        best_loglik: f64,
    },

    #[error("estimation failure: {0}")]
    EstimationFailure(String),

    #[error("filter degeneracy at t={t}: total weight is numerically zero")]
    FilterDegeneracy { t: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("evaluation failure: {0}")]
    EvaluationFailure(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RmdError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(RmdError::InvalidInput(msg.into()))
}

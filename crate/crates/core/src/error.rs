use thiserror::Error;

/// Errors surfaced by the core library.
#[derive(Error, Debug)]
pub enum CoreError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value produced by {op}{}", detail.as_ref().map(|d| format!(" ({d})")).unwrap_or_default())]
    NonFinite {
        op: &'static str,
        detail: Option<String>,
    },

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("observation value {0} is not producible by any latent assignment")]
    NotInImage(usize),

    #[error("empty style intervention set")]
    EmptyInterventionSet,

    #[error("sealed sample {0} has no latents and no style estimator was configured")]
    NoStyleEstimator(u64),

    #[error("model has not been trained")]
    Untrained,

    #[error("stale forward cache: {0}")]
    StaleCache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub fn shape(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        CoreError::Shape {
            op,
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn non_finite(op: &'static str) -> Self {
        CoreError::NonFinite { op, detail: None }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;

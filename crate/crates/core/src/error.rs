use crate::types::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid catalog: {}", join_violations(.0))]
    Catalog(Vec<Violation>),

    #[error("label sets differ: {left:?} vs {right:?}")]
    LabelMismatch {
        left: Vec<String>,
        right: Vec<String>,
    },

    #[error("unknown label `{label}`")]
    UnknownLabel { label: String },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("not found: {0}")]
    NotFound(String),

    #[error("coverage gap: {} ids without labels: {}", .0.len(), .0.join(", "))]
    Coverage(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

use std::path::PathBuf;

pub type Result<T, E = GenError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("backend error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Backend { status: Option<u16>, message: String },

    #[error("malformed backend payload: {0}")]
    MalformedPayload(String),

    #[error("run incomplete: {completed}/{requested} images in {}: {reason}", run_dir.display())]
    Incomplete {
        run_dir: PathBuf,
        completed: usize,
        requested: usize,
        reason: String,
    },

    #[error(transparent)]
    Core(#[from] fairguide_core::Error),

    #[error(transparent)]
    Llm(#[from] fairguide_llm::LlmError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),
}

impl GenError {
    /// Whether retrying the same request may succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            GenError::Backend { status: None, .. } => true,
            GenError::Backend { status: Some(s), .. } => *s >= 500 || *s == 429 || *s == 408,
            _ => false,
        }
    }
}

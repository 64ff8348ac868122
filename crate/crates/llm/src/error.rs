use fairguide_core::types::Violation;

pub type Result<T, E = LlmError> = std::result::Result<T, E>;

/// Failure talking to a chat provider.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{}", match .status { Some(s) => format!("provider returned HTTP {s}: {}", .message), None => format!("provider error: {}", .message) })]
pub struct TransportError {
    pub status: Option<u16>,
    pub message: String,
}

impl TransportError {
    pub fn new(message: impl Into<String>) -> Self {
        TransportError { status: None, message: message.into() }
    }

    pub fn with_status(status: u16, message: impl Into<String>) -> Self {
        TransportError { status: Some(status), message: message.into() }
    }
}

/// Why a detection response was not accepted. `rule` wording is what the
/// corrective retry message quotes back to the model.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("no JSON object found in the response")]
    NoJsonObject { raw: String },
    #[error("response is not valid JSON: {message}")]
    InvalidJson { message: String, raw: String },
    #[error("the value for \"{category}\" must be an array of strings")]
    NotStringArray { category: String, raw: String },
    #[error("{}", .violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Catalog { violations: Vec<Violation>, raw: String },
}

impl ParseError {
    pub fn raw(&self) -> &str {
        match self {
            ParseError::NoJsonObject { raw }
            | ParseError::InvalidJson { raw, .. }
            | ParseError::NotStringArray { raw, .. }
            | ParseError::Catalog { raw, .. } => raw,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error(transparent)]
    Transport(#[from] TransportError),

    #[error("attribute detection failed after {attempts} attempt(s): {reason}")]
    DetectionFailed { attempts: usize, reason: ParseError, last_raw: String },

    #[error("API key not set: export {var}")]
    MissingApiKey { var: String },

    #[error("assignment is empty; nothing to fuse")]
    EmptyAssignment,

    #[error("invalid provider config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] fairguide_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

//! Chat-completion bridge: attribute detection and prompt fusion over an
//! OpenAI-style API, with a scripted mock for offline use.

pub mod cache;
pub mod client;
pub mod config;
pub mod error;
pub mod http;
pub mod mock;
pub mod parse;
pub mod templates;
pub mod transport;

pub use cache::{CacheKey, ResponseCache};
pub use client::{check_fusion, DetectionResult, FusionResult, LlmClient, FUSION_WORD_SLACK};
pub use config::{
    ProviderConfig, ENV_API_KEY, ENV_BASE_URL, ENV_FUSION_API_KEY, ENV_FUSION_BASE_URL, ENV_FUSION_MODEL, ENV_MODEL,
};
pub use error::{LlmError, ParseError, Result, TransportError};
pub use http::HttpTransport;
pub use mock::{MockTransport, DEMO_CATALOG};
pub use parse::parse_detection;
pub use templates::{
    build_detection_request, build_fusion_request, template_hash, DETECTION_TEMPLATE, FUSION_TEMPLATE,
};
pub use transport::{ChatMessage, ChatRequest, ChatResponse, ChatTransport, Role};

use std::sync::Arc;

use fairguide_core::manifest::FusionSource;
use fairguide_core::resample::fallback_fuse;
use fairguide_core::{AttributeAssignment, AttributeCatalog, PromptText};
use tokio::sync::Semaphore;

use crate::cache::{CacheKey, ResponseCache};
use crate::config::ProviderConfig;
use crate::error::{LlmError, ParseError, Result, TransportError};
use crate::parse::parse_detection;
use crate::templates::{
    build_detection_request, build_fusion_request, fusion_user_message, template_hash, DETECTION_TEMPLATE,
    FUSION_TEMPLATE,
};
use crate::transport::{ChatMessage, ChatRequest, ChatResponse, ChatTransport};

/// Words a fused prompt may add beyond the prompt and attribute values.
pub const FUSION_WORD_SLACK: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub catalog: AttributeCatalog,
    pub raw: String,
    pub model: String,
    pub latency_ms: u64,
    pub attempts: usize,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub prompt: PromptText,
    pub source: FusionSource,
    /// Last provider reply, if any was received.
    pub raw: Option<String>,
    pub attempts: usize,
    pub cached: bool,
}

/// Provider client with bounded concurrency, corrective retries and a
/// response cache.
#[derive(Clone)]
pub struct LlmClient {
    transport: Arc<dyn ChatTransport>,
    config: ProviderConfig,
    cache: Arc<ResponseCache>,
    permits: Arc<Semaphore>,
}

impl LlmClient {
    pub fn new(transport: Arc<dyn ChatTransport>, config: ProviderConfig) -> Result<Self> {
        config.validate()?;
        Ok(LlmClient {
            transport,
            permits: Arc::new(Semaphore::new(config.max_in_flight)),
            config,
            cache: Arc::new(ResponseCache::in_memory()),
        })
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = cache;
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    async fn call(&self, messages: &[ChatMessage]) -> Result<ChatResponse, TransportError> {
        let _permit = self.permits.acquire().await.expect("semaphore is never closed");
        let request = ChatRequest {
            model: self.config.model.clone(),
            messages: messages.to_vec(),
            temperature: self.config.temperature,
        };
        self.transport.complete(&request).await
    }

    fn key(&self, template: &str, prompt: &str) -> CacheKey {
        CacheKey { model: self.config.model.clone(), template: template_hash(template), prompt: prompt.to_string() }
    }

    /// Ask the provider which attribute categories `y` leaves open.
    ///
    /// Rejected replies are answered with a corrective turn, up to
    /// `max_retries` times. Transport failures are returned immediately.
    pub async fn detect_biases(&self, y: &PromptText) -> Result<DetectionResult> {
        let key = self.key(DETECTION_TEMPLATE, y.as_str());
        if let Some(raw) = self.cache.get(&key) {
            if let Ok(catalog) = parse_detection(&raw) {
                return Ok(DetectionResult {
                    catalog,
                    raw,
                    model: self.config.model.clone(),
                    latency_ms: 0,
                    attempts: 0,
                    cached: true,
                });
            }
        }
        let mut messages = build_detection_request(y);
        let mut last: Option<ParseError> = None;
        let attempts = self.config.max_retries + 1;
        for attempt in 1..=attempts {
            let reply = self.call(&messages).await?;
            match parse_detection(&reply.content) {
                Ok(catalog) => {
                    self.cache.insert(key, reply.content.clone())?;
                    return Ok(DetectionResult {
                        catalog,
                        raw: reply.content,
                        model: reply.model,
                        latency_ms: reply.latency_ms,
                        attempts: attempt,
                        cached: false,
                    });
                }
                Err(e) => {
                    tracing::warn!(attempt, "detection reply rejected: {e}");
                    messages.push(ChatMessage::assistant(reply.content.clone()));
                    messages.push(ChatMessage::user(format!(
                        "Your previous answer violated: {e}. Output only the corrected JSON."
                    )));
                    last = Some(e);
                }
            }
        }
        let reason = last.expect("at least one attempt");
        Err(LlmError::DetectionFailed { attempts, last_raw: reason.raw().to_string(), reason })
    }

    /// Rewrite `y` to include the assigned attributes. Falls back to the
    /// comma-joined form when the provider is unreachable or keeps breaking
    /// the output rules.
    pub async fn fuse_prompt(&self, y: &PromptText, assignment: &AttributeAssignment) -> Result<FusionResult> {
        let user = fusion_user_message(y, assignment)?;
        let key = self.key(FUSION_TEMPLATE, &user);
        if let Some(raw) = self.cache.get(&key) {
            if let Ok(prompt) = check_fusion(&raw, y, assignment) {
                return Ok(FusionResult { prompt, source: FusionSource::Llm, raw: Some(raw), attempts: 0, cached: true });
            }
        }
        let mut messages = build_fusion_request(y, assignment)?;
        let mut last_raw = None;
        let mut attempts = 0;
        for _ in 0..=self.config.max_retries {
            attempts += 1;
            let reply = match self.call(&messages).await {
                Ok(r) => r,
                Err(e) => {
                    tracing::warn!("fusion provider unavailable, using fallback: {e}");
                    break;
                }
            };
            match check_fusion(&reply.content, y, assignment) {
                Ok(prompt) => {
                    self.cache.insert(key, reply.content.clone())?;
                    return Ok(FusionResult {
                        prompt,
                        source: FusionSource::Llm,
                        raw: Some(reply.content),
                        attempts,
                        cached: false,
                    });
                }
                Err(rule) => {
                    tracing::warn!(attempts, "fusion reply rejected: {rule}");
                    messages.push(ChatMessage::assistant(reply.content.clone()));
                    messages.push(ChatMessage::user(format!(
                        "Your previous answer violated: {rule}. Output only the corrected prompt text."
                    )));
                    last_raw = Some(reply.content);
                }
            }
        }
        Ok(FusionResult {
            prompt: fallback_fuse(y, assignment)?,
            source: FusionSource::Fallback,
            raw: last_raw,
            attempts,
            cached: false,
        })
    }
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Validate a fusion reply, returning the rule it breaks on failure.
pub fn check_fusion(raw: &str, y: &PromptText, assignment: &AttributeAssignment) -> Result<PromptText, String> {
    let mut text = raw.trim();
    if let Some(inner) = text.strip_prefix('{').and_then(|t| t.strip_suffix('}')) {
        text = inner.trim();
    }
    if text.is_empty() {
        return Err("Output must contain only the rewritten prompt text (the reply was empty)".into());
    }
    if text.contains('\n') {
        return Err("Output must contain only the rewritten prompt text (the reply spans several lines)".into());
    }
    let budget = word_count(y.as_str())
        + assignment.iter().map(|(_, v)| word_count(v)).sum::<usize>()
        + FUSION_WORD_SLACK;
    if word_count(text) > budget {
        return Err(format!(
            "Do not include extra descriptive words, embellishments, or commentary (limit {budget} words)"
        ));
    }
    PromptText::new(text).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn y() -> PromptText {
        PromptText::new("A portrait of a person reading a book").unwrap()
    }

    fn a() -> AttributeAssignment {
        [("gender", "female"), ("age", "elderly")].into_iter().collect()
    }

    #[test]
    fn fusion_checks() {
        assert_eq!(
            check_fusion("  A portrait of an elderly female person reading a book\n", &y(), &a()).unwrap().as_str(),
            "A portrait of an elderly female person reading a book"
        );
        assert_eq!(
            check_fusion("{\n  A portrait of an elderly female person reading a book\n}", &y(), &a()).unwrap().as_str(),
            "A portrait of an elderly female person reading a book"
        );
        assert!(check_fusion("", &y(), &a()).is_err());
        assert!(check_fusion("{ }", &y(), &a()).is_err());
        assert!(check_fusion("line one\n\nline two", &y(), &a()).is_err());
        let long = "A detailed portrait depicting an elderly female person seated in a quiet and serene setting, holding a book gently in her hands while reading it with focused attention and calm concentration.";
        assert!(check_fusion(long, &y(), &a()).is_err());
    }
}

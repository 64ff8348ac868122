use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::Deserialize;

use crate::config::ProviderConfig;
use crate::error::{LlmError, Result, TransportError};
use crate::transport::{ChatRequest, ChatResponse, ChatTransport};

/// OpenAI-compatible `POST {base}/chat/completions` client.
pub struct HttpTransport {
    client: reqwest::Client,
    endpoint: String,
    api_key: String,
}

#[derive(Deserialize)]
struct Completion {
    #[serde(default)]
    model: Option<String>,
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

impl HttpTransport {
    /// Resolve the API key from the environment variable named in `config`.
    pub fn from_config(config: &ProviderConfig) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| LlmError::MissingApiKey { var: config.api_key_env.clone() })?;
        Self::new(&config.base_url, api_key, Duration::from_secs_f64(config.timeout_secs))
    }

    pub fn new(base_url: &str, api_key: String, timeout: Duration) -> Result<Self> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(HttpTransport {
            client,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
        })
    }
}

#[async_trait]
impl ChatTransport for HttpTransport {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let started = Instant::now();
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(request)
            .send()
            .await
            .map_err(|e| TransportError::new(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().await.map_err(|e| TransportError::new(e.to_string()))?;
        if !status.is_success() {
            let snippet: String = body.chars().take(500).collect();
            return Err(TransportError::with_status(status.as_u16(), snippet));
        }
        let parsed: Completion = serde_json::from_str(&body)
            .map_err(|e| TransportError::new(format!("malformed completion body: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| TransportError::new("completion has no message content"))?;
        Ok(ChatResponse {
            content,
            model: parsed.model.unwrap_or_else(|| request.model.clone()),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

use std::time::{Duration, Instant};

use async_trait::async_trait;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::backend::ImageBackend;
use crate::error::{GenError, Result};
use crate::request::{is_png, GeneratedImage, GenerationRequest, ImageMetadata};

pub const ENV_BACKEND_URL: &str = "FAIRGUIDE_BACKEND_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub timeout_secs: f64,
    pub retries: usize,
    /// First backoff delay; doubles on every retry.
    pub backoff_ms: u64,
    pub id: String,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        HttpBackendConfig {
            base_url: "http://127.0.0.1:7860".into(),
            timeout_secs: 300.0,
            retries: 2,
            backoff_ms: 500,
            id: "http".into(),
        }
    }
}

impl HttpBackendConfig {
    pub fn from_env() -> Self {
        let mut c = HttpBackendConfig::default();
        if let Ok(url) = std::env::var(ENV_BACKEND_URL) {
            if !url.trim().is_empty() {
                c.base_url = url;
            }
        }
        c
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    seed: u64,
    width: u32,
    height: u32,
    guidance_scale: f64,
    num_images: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    images: Vec<String>,
    #[serde(default)]
    model: Option<String>,
}

/// Client for `POST {base}/v1/generate`.
pub struct HttpBackend {
    client: reqwest::Client,
    endpoint: String,
    config: HttpBackendConfig,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self> {
        if !(config.timeout_secs > 0.0 && config.timeout_secs.is_finite()) {
            return Err(GenError::InvalidRequest("timeout must be > 0".into()));
        }
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| GenError::InvalidRequest(e.to_string()))?;
        Ok(HttpBackend {
            client,
            endpoint: format!("{}/v1/generate", config.base_url.trim_end_matches('/')),
            config,
        })
    }

    async fn attempt(&self, request: &GenerationRequest) -> Result<(Vec<u8>, Option<String>)> {
        let body = WireRequest {
            prompt: request.prompt.as_str(),
            seed: request.seed,
            width: request.width,
            height: request.height,
            guidance_scale: request.guidance_scale,
            num_images: 1,
        };
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .await
            .map_err(|e| GenError::Backend { status: None, message: e.to_string() })?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| GenError::Backend { status: None, message: e.to_string() })?;
        if !status.is_success() {
            return Err(GenError::Backend {
                status: Some(status.as_u16()),
                message: text.chars().take(300).collect(),
            });
        }
        let parsed: WireResponse =
            serde_json::from_str(&text).map_err(|e| GenError::MalformedPayload(format!("response body: {e}")))?;
        let first = parsed.images.first().ok_or_else(|| GenError::MalformedPayload("no images returned".into()))?;
        let png = base64::engine::general_purpose::STANDARD
            .decode(first.trim())
            .map_err(|e| GenError::MalformedPayload(format!("image is not base64: {e}")))?;
        if !is_png(&png) {
            return Err(GenError::MalformedPayload("image is not a PNG".into()));
        }
        Ok((png, parsed.model))
    }
}

#[async_trait]
impl ImageBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.config.id
    }

    async fn generate(&self, request: &GenerationRequest) -> Result<GeneratedImage> {
        request.validate()?;
        let started = Instant::now();
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut attempt = 0;
        loop {
            match self.attempt(request).await {
                Ok((png, model)) => {
                    let model = model.unwrap_or_else(|| "unknown".into());
                    let latency = started.elapsed().as_millis() as u64;
                    return Ok(GeneratedImage { png, metadata: ImageMetadata::echo(request, &model, self.id(), latency) });
                }
                Err(e) if e.is_transient() && attempt < self.config.retries => {
                    attempt += 1;
                    tracing::warn!(attempt, "backend request failed, retrying in {delay:?}: {e}");
                    tokio::time::sleep(delay).await;
                    delay *= 2;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

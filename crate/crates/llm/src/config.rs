use serde::{Deserialize, Serialize};

use crate::error::{LlmError, Result};

pub const ENV_API_KEY: &str = "FAIRGUIDE_LLM_API_KEY";
pub const ENV_BASE_URL: &str = "FAIRGUIDE_LLM_BASE_URL";
pub const ENV_MODEL: &str = "FAIRGUIDE_LLM_MODEL";
pub const ENV_FUSION_API_KEY: &str = "FAIRGUIDE_LLM_FUSION_API_KEY";
pub const ENV_FUSION_BASE_URL: &str = "FAIRGUIDE_LLM_FUSION_BASE_URL";
pub const ENV_FUSION_MODEL: &str = "FAIRGUIDE_LLM_FUSION_MODEL";

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_DETECTION_MODEL: &str = "claude-3-7-sonnet-20250219";
pub const DEFAULT_FUSION_MODEL: &str = "gpt-4o-mini-2024-07-18";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: f64,
    pub max_retries: usize,
    pub max_in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::detection()
    }
}

impl ProviderConfig {
    pub fn detection() -> Self {
        ProviderConfig {
            base_url: DEFAULT_BASE_URL.into(),
            api_key_env: ENV_API_KEY.into(),
            model: DEFAULT_DETECTION_MODEL.into(),
            temperature: 0.0,
            timeout_secs: 60.0,
            max_retries: 2,
            max_in_flight: 4,
        }
    }

    pub fn fusion() -> Self {
        ProviderConfig { model: DEFAULT_FUSION_MODEL.into(), ..ProviderConfig::detection() }
    }

    pub fn detection_from_env() -> Self {
        let mut c = ProviderConfig::detection();
        c.apply_detection_env();
        c
    }

    pub fn fusion_from_env() -> Self {
        let mut c = ProviderConfig::fusion();
        c.apply_fusion_env();
        c
    }

    pub fn apply_detection_env(&mut self) {
        if let Some(v) = env(ENV_BASE_URL) {
            self.base_url = v;
        }
        if let Some(v) = env(ENV_MODEL) {
            self.model = v;
        }
    }

    /// Fusion settings fall back to the detection variables when their own
    /// are unset.
    pub fn apply_fusion_env(&mut self) {
        if let Some(v) = env(ENV_FUSION_BASE_URL).or_else(|| env(ENV_BASE_URL)) {
            self.base_url = v;
        }
        if env(ENV_FUSION_API_KEY).is_some() {
            self.api_key_env = ENV_FUSION_API_KEY.into();
        }
        if let Some(v) = env(ENV_FUSION_MODEL) {
            self.model = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::Config("temperature must be >= 0".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(LlmError::Config("timeout must be > 0".into()));
        }
        if self.max_in_flight == 0 {
            return Err(LlmError::Config("in-flight limit must be >= 1".into()));
        }
        Ok(())
    }
}

fn env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.trim().is_empty())
}

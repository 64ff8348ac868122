use std::path::{Path, PathBuf};

use anyhow::Context;
use fairguide_gen::{HttpBackendConfig, ENV_BACKEND_URL};
use fairguide_llm::ProviderConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSection {
    pub base_url: String,
    pub profile: String,
    pub parallelism: usize,
    pub retries: usize,
    pub timeout_secs: f64,
}

impl Default for BackendSection {
    fn default() -> Self {
        let http = HttpBackendConfig::default();
        BackendSection {
            base_url: http.base_url,
            profile: "sd15".into(),
            parallelism: 4,
            retries: http.retries,
            timeout_secs: http.timeout_secs,
        }
    }
}

impl BackendSection {
    pub fn http_config(&self) -> HttpBackendConfig {
        HttpBackendConfig {
            base_url: self.base_url.clone(),
            retries: self.retries,
            timeout_secs: self.timeout_secs,
            id: format!("http:{}", self.profile),
            ..HttpBackendConfig::default()
        }
    }
}

/// Settings resolved from, in increasing priority: built-in defaults, the
/// JSON config file, environment variables, command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppConfig {
    pub detection: ProviderConfig,
    pub fusion: ProviderConfig,
    pub backend: BackendSection,
    pub runs_dir: PathBuf,
    pub cache_path: PathBuf,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            detection: ProviderConfig::detection(),
            fusion: ProviderConfig::fusion(),
            backend: BackendSection::default(),
            runs_dir: PathBuf::from("runs"),
            cache_path: PathBuf::from(".fairguide/llm-cache.jsonl"),
        }
    }
}

impl AppConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::from_json(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => AppConfig::default(),
        };
        config.apply_env();
        Ok(config)
    }

    /// Parse a possibly partial config; omitted keys keep their defaults.
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let mut merged = serde_json::to_value(AppConfig::default())?;
        merge(&mut merged, serde_json::from_str(text)?);
        Ok(serde_json::from_value(merged)?)
    }

    pub fn apply_env(&mut self) {
        self.detection.apply_detection_env();
        self.fusion.apply_fusion_env();
        if let Ok(url) = std::env::var(ENV_BACKEND_URL) {
            if !url.trim().is_empty() {
                self.backend.base_url = url;
            }
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_section_defaults() {
        let c = AppConfig::from_json(r#"{"fusion": {"max_retries": 5}, "backend": {"parallelism": 2}}"#).unwrap();
        assert_eq!(c.fusion.max_retries, 5);
        assert_eq!(c.fusion.model, ProviderConfig::fusion().model);
        assert_eq!(c.backend.parallelism, 2);
        assert_eq!(c.backend.profile, "sd15");
        assert_eq!(c.detection, ProviderConfig::detection());
    }

    #[test]
    fn unknown_types_rejected() {
        assert!(AppConfig::from_json(r#"{"backend": {"parallelism": "many"}}"#).is_err());
    }
}

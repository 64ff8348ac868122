use fairguide_core::PromptText;
use serde::{Deserialize, Serialize};

use crate::error::{GenError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: PromptText,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub guidance_scale: f64,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(GenError::InvalidRequest("width and height must be positive".into()));
        }
        if !self.guidance_scale.is_finite() {
            return Err(GenError::InvalidRequest("guidance scale must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetadata {
    pub prompt: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub guidance_scale: f64,
    pub model: String,
    pub backend: String,
    pub latency_ms: u64,
}

impl ImageMetadata {
    pub fn echo(req: &GenerationRequest, model: &str, backend: &str, latency_ms: u64) -> Self {
        ImageMetadata {
            prompt: req.prompt.as_str().to_string(),
            seed: req.seed,
            width: req.width,
            height: req.height,
            guidance_scale: req.guidance_scale,
            model: model.to_string(),
            backend: backend.to_string(),
            latency_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedImage {
    pub png: Vec<u8>,
    pub metadata: ImageMetadata,
}

/// Resolution and guidance defaults for a diffusion model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub guidance_scale: f64,
}

impl BackendProfile {
    pub fn sd15() -> Self {
        BackendProfile { name: "sd15".into(), width: 512, height: 512, guidance_scale: 7.5 }
    }

    pub fn sd35() -> Self {
        BackendProfile { name: "sd35".into(), width: 1024, height: 1024, guidance_scale: 4.0 }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "sd15" => Ok(Self::sd15()),
            "sd35" => Ok(Self::sd35()),
            other => Err(GenError::InvalidRequest(format!("unknown profile `{other}` (expected sd15 or sd35)"))),
        }
    }

    pub fn request(&self, prompt: PromptText, seed: u64) -> GenerationRequest {
        GenerationRequest { prompt, seed, width: self.width, height: self.height, guidance_scale: self.guidance_scale }
    }
}

impl Default for BackendProfile {
    fn default() -> Self {
        Self::sd15()
    }
}

/// Whether `bytes` start with the PNG signature.
pub fn is_png(bytes: &[u8]) -> bool {
    bytes.starts_with(b"\x89PNG\r\n\x1a\n")
}

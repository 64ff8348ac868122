use async_trait::async_trait;

use crate::error::Result;
use crate::request::{GeneratedImage, GenerationRequest};

#[async_trait]
pub trait ImageBackend: Send + Sync {
    /// Identifier recorded in manifests.
    fn id(&self) -> &str;

    async fn generate(&self, request: &GenerationRequest) -> Result<GeneratedImage>;
}

use std::io::Cursor;

use async_trait::async_trait;
use image::{ImageFormat, RgbImage};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::backend::ImageBackend;
use crate::error::Result;
use crate::request::{GeneratedImage, GenerationRequest, ImageMetadata};

/// Side length of the mock PNGs, independent of the requested size.
pub const MOCK_SIZE: u32 = 16;

/// Hermetic backend: pixels are a pure function of (prompt, seed).
#[derive(Debug, Clone, Default)]
pub struct MockBackend;

impl MockBackend {
    pub fn new() -> Self {
        MockBackend
    }

    pub fn render(request: &GenerationRequest) -> Result<Vec<u8>> {
        let mut h = Sha256::new();
        h.update(request.prompt.as_str().as_bytes());
        h.update(request.seed.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        let mut pixels = vec![0u8; (MOCK_SIZE * MOCK_SIZE * 3) as usize];
        rng.fill_bytes(&mut pixels);
        let img = RgbImage::from_raw(MOCK_SIZE, MOCK_SIZE, pixels).expect("buffer sized for the image");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }
}

#[async_trait]
impl ImageBackend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    async fn generate(&self, request: &GenerationRequest) -> Result<GeneratedImage> {
        request.validate()?;
        Ok(GeneratedImage {
            png: Self::render(request)?,
            metadata: ImageMetadata::echo(request, "mock", self.id(), 0),
        })
    }
}

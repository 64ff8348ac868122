//! Counter-keyed random streams.
//!
//! A stream is identified by a base seed plus a tuple of counters (sample
//! index, category, ...). Keys are hashed with SHA-256 into a ChaCha seed,
//! so draws never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Domain tags keep streams used for different purposes disjoint.
#[derive(Debug, Clone, Copy)]
pub enum StreamTag {
    Reverse,
    Ancestral,
    Assignment,
    Bootstrap,
}

impl StreamTag {
    fn as_bytes(self) -> &'static [u8] {
        match self {
            StreamTag::Reverse => b"reverse",
            StreamTag::Ancestral => b"ancestral",
            StreamTag::Assignment => b"assignment",
            StreamTag::Bootstrap => b"bootstrap",
        }
    }
}

pub fn stream(tag: StreamTag, seed: u64, index: u64, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update([0u8]);
    h.update(seed.to_le_bytes());
    h.update(index.to_le_bytes());
    h.update((key.len() as u64).to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub model: String,
    pub template: String,
    pub prompt: String,
}

#[derive(Serialize, Deserialize)]
struct Record {
    key: CacheKey,
    raw: String,
    timestamp: String,
}

/// Accepted provider replies, optionally persisted as JSON lines.
#[derive(Default)]
pub struct ResponseCache {
    entries: RwLock<HashMap<CacheKey, String>>,
    file: Option<(PathBuf, Mutex<()>)>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache::default()
    }

    /// Open (or start) a cache file. Unreadable lines are skipped.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if let Ok(f) = std::fs::File::open(&path) {
            for line in BufReader::new(f).lines() {
                let line = line?;
                match serde_json::from_str::<Record>(&line) {
                    Ok(r) => {
                        entries.insert(r.key, r.raw);
                    }
                    Err(e) => tracing::warn!("skipping cache line in {}: {e}", path.display()),
                }
            }
        }
        Ok(ResponseCache { entries: RwLock::new(entries), file: Some((path, Mutex::new(()))) })
    }

    pub fn get(&self, key: &CacheKey) -> Option<String> {
        self.entries.read().get(key).cloned()
    }

    pub fn insert(&self, key: CacheKey, raw: String) -> Result<()> {
        if let Some((path, lock)) = &self.file {
            let _guard = lock.lock();
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let record = Record { key: key.clone(), raw: raw.clone(), timestamp: chrono::Utc::now().to_rfc3339() };
            let mut line = serde_json::to_vec(&record)?;
            line.push(b'\n');
            OpenOptions::new().create(true).append(true).open(path)?.write_all(&line)?;
        }
        self.entries.write().insert(key, raw);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

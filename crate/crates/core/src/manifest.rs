//! On-disk record of a batch generation run.
//!
//! A run directory holds `run.json` (id, config snapshot, status),
//! `manifest.jsonl` (one entry per image, ordered by index) and the images.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::{AttributeAssignment, AttributeCatalog, AttributeDistribution};

pub const RUN_FILE: &str = "run.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionSource {
    Llm,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub original_prompt: String,
    pub assignment: AttributeAssignment,
    pub fused_prompt: String,
    pub fusion_source: FusionSource,
    pub seed: u64,
    /// Path relative to the run directory, or a URL.
    pub image: String,
    pub backend: String,
    pub timestamp: String,
}

impl ManifestEntry {
    /// Identifier used to join against label and embedding files.
    pub fn image_id(&self) -> String {
        image_id_of(&self.image)
    }
}

/// File stem of an image reference: `runs/x/12.png` and `12` both give `12`.
pub fn image_id_of(reference: &str) -> String {
    let name = reference.rsplit('/').next().unwrap_or(reference);
    match name.rsplit_once('.') {
        Some((stem, _)) if !stem.is_empty() => stem.to_string(),
        _ => name.to_string(),
    }
}

/// Everything that determines a run's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub prompt: String,
    pub catalog: AttributeCatalog,
    pub target: String,
    pub distribution: AttributeDistribution,
    pub n: usize,
    pub seed: u64,
    pub backend: String,
    pub width: u32,
    pub height: u32,
    pub guidance_scale: f64,
    pub fusion: String,
}

impl RunConfig {
    /// Stable id: the first 16 hex digits of the SHA-256 of the JSON snapshot.
    pub fn run_id(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub status: RunStatus,
    pub completed: usize,
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub run_id: String,
    pub status: RunStatus,
    pub config: RunConfig,
    pub entries: Vec<ManifestEntry>,
}

impl GenerationManifest {
    /// Load `run.json` and `manifest.jsonl` from a run directory.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let record: RunRecord = serde_json::from_str(&fs::read_to_string(dir.join(RUN_FILE))?)?;
        let mut entries = read_entries(&dir.join(MANIFEST_FILE))?;
        entries.sort_by_key(|e| e.index);
        Ok(GenerationManifest {
            run_id: record.run_id,
            status: record.status,
            config: record.config,
            entries,
        })
    }

    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete && self.entries.len() == self.config.n
    }
}

/// Read JSON-lines entries; a missing file reads as empty. A truncated last
/// line (from an interrupted append) is skipped.
pub fn read_entries(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let lines: Vec<String> = BufReader::new(file).lines().collect::<std::io::Result<_>>()?;
    let last = lines.len().saturating_sub(1);
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(e) => out.push(e),
            Err(_) if i == last => tracing::warn!("skipping truncated manifest line {}", i + 1),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Append one entry as a JSON line.
pub fn append_entry(path: &Path, entry: &ManifestEntry) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_vec(entry)?;
    line.push(b'\n');
    f.write_all(&line)?;
    Ok(())
}

/// Rewrite the manifest sorted by index, via a temporary file.
pub fn write_entries(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut sorted: Vec<&ManifestEntry> = entries.iter().collect();
    sorted.sort_by_key(|e| e.index);
    let mut buf = Vec::new();
    for e in sorted {
        serde_json::to_writer(&mut buf, e)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn write_record(dir: &Path, record: &RunRecord) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(record)?;
    json.push(b'\n');
    write_atomic(&dir.join(RUN_FILE), &json)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp: PathBuf = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(Error::from)
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fairguide_core::manifest::{
    append_entry, read_entries, write_entries, write_record, FusionSource, GenerationManifest, ManifestEntry,
    RunConfig, RunRecord, RunStatus, MANIFEST_FILE,
};
use fairguide_core::resample::{build_fair_distribution, fallback_fuse, sample_assignment, TargetSpec};
use fairguide_core::{AttributeAssignment, AttributeCatalog, PromptText};
use fairguide_llm::LlmClient;
use futures::stream::{self, StreamExt};

use crate::backend::ImageBackend;
use crate::clock::{Clock, SystemClock};
use crate::error::{GenError, Result};
use crate::request::BackendProfile;

/// How `y` and an assignment become the prompt sent to the backend.
#[derive(Clone)]
pub enum Fusion {
    Fallback,
    Llm(LlmClient),
}

impl Fusion {
    pub fn describe(&self) -> String {
        match self {
            Fusion::Fallback => "fallback".into(),
            Fusion::Llm(c) => format!("llm:{}", c.config().model),
        }
    }

    pub async fn fuse(&self, y: &PromptText, a: &AttributeAssignment) -> Result<(PromptText, FusionSource)> {
        match self {
            Fusion::Fallback => Ok((fallback_fuse(y, a)?, FusionSource::Fallback)),
            Fusion::Llm(client) => {
                let r = client.fuse_prompt(y, a).await?;
                Ok((r.prompt, r.source))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchSpec {
    pub prompt: PromptText,
    pub catalog: AttributeCatalog,
    pub target: TargetSpec,
    pub n: usize,
    pub seed: u64,
    pub profile: BackendProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    pub completed: usize,
    pub requested: usize,
}

pub type ProgressFn = dyn Fn(Progress) + Send + Sync;

#[derive(Clone)]
pub struct BatchOptions {
    pub parallelism: usize,
    pub clock: Arc<dyn Clock>,
    pub progress: Option<Arc<ProgressFn>>,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions { parallelism: 4, clock: Arc::new(SystemClock), progress: None }
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub dir: PathBuf,
    pub manifest: GenerationManifest,
    /// Images produced by this call.
    pub generated: usize,
    /// Entries carried over from an earlier, interrupted call.
    pub reused: usize,
    pub warnings: Vec<String>,
}

/// Resolve the target distribution and snapshot everything that determines
/// the run.
pub fn plan_run(spec: &BatchSpec, backend_id: &str, fusion: &Fusion) -> Result<(RunConfig, Vec<String>)> {
    if spec.n == 0 {
        return Err(GenError::InvalidRequest("n must be at least 1".into()));
    }
    let violations = fairguide_core::validate_catalog(&spec.catalog);
    if !violations.is_empty() {
        return Err(fairguide_core::Error::Catalog(violations).into());
    }
    let fair = build_fair_distribution(&spec.catalog, &spec.target)?;
    let config = RunConfig {
        prompt: spec.prompt.as_str().to_string(),
        catalog: spec.catalog.clone(),
        target: spec.target.describe(),
        distribution: fair.distribution,
        n: spec.n,
        seed: spec.seed,
        backend: backend_id.to_string(),
        width: spec.profile.width,
        height: spec.profile.height,
        guidance_scale: spec.profile.guidance_scale,
        fusion: fusion.describe(),
    };
    Ok((config, fair.warnings))
}

pub fn image_file(index: usize) -> String {
    format!("{index}.png")
}

/// Generate `spec.n` images into `runs_root/<run id>/`.
///
/// Entries already on disk (with their image present) are kept, so an
/// interrupted run resumes at the missing indices. Image `i` always uses
/// seed `spec.seed + i` and the assignment drawn for index `i`.
pub async fn generate_batch(
    spec: &BatchSpec,
    backend: Arc<dyn ImageBackend>,
    fusion: &Fusion,
    runs_root: &Path,
    options: &BatchOptions,
) -> Result<BatchOutcome> {
    let (config, warnings) = plan_run(spec, backend.id(), fusion)?;
    for w in &warnings {
        tracing::warn!("{w}");
    }
    let run_id = config.run_id();
    let dir = runs_root.join(&run_id);
    std::fs::create_dir_all(&dir)?;
    let manifest_path = dir.join(MANIFEST_FILE);

    let mut done: BTreeMap<usize, ManifestEntry> = BTreeMap::new();
    for e in read_entries(&manifest_path)? {
        if e.index < spec.n && dir.join(&e.image).is_file() {
            done.insert(e.index, e);
        }
    }
    let reused = done.len();
    let entries: Vec<ManifestEntry> = done.values().cloned().collect();
    write_entries(&manifest_path, &entries)?;
    let record = |status, completed, error: Option<String>| RunRecord {
        run_id: run_id.clone(),
        status,
        completed,
        config: config.clone(),
        error,
    };
    write_record(&dir, &record(RunStatus::Incomplete, reused, None))?;

    let missing: Vec<usize> = (0..spec.n).filter(|i| !done.contains_key(i)).collect();
    if !missing.is_empty() {
        tracing::info!(run = %run_id, missing = missing.len(), reused, "generating");
    }
    let report = |completed| {
        if let Some(p) = &options.progress {
            p(Progress { completed, requested: spec.n });
        }
    };
    report(done.len());

    let dist = &config.distribution;
    let backend = &backend;
    let dir_ref = &dir;
    let mut results = stream::iter(missing)
        .map(|index| async move {
            let assignment = sample_assignment(dist, spec.seed, index as u64);
            let (fused, source) = fusion.fuse(&spec.prompt, &assignment).await?;
            let seed = spec.seed + index as u64;
            let request = spec.profile.request(fused.clone(), seed);
            let image = backend.generate(&request).await?;
            let file = image_file(index);
            tokio::fs::write(dir_ref.join(&file), &image.png).await?;
            Ok::<_, GenError>(ManifestEntry {
                index,
                original_prompt: spec.prompt.as_str().to_string(),
                assignment,
                fused_prompt: fused.as_str().to_string(),
                fusion_source: source,
                seed,
                image: file,
                backend: backend.id().to_string(),
                timestamp: options.clock.now(),
            })
        })
        .buffer_unordered(options.parallelism.max(1));

    let mut generated = 0;
    let mut failure = None;
    while let Some(r) = results.next().await {
        match r {
            Ok(entry) => {
                append_entry(&manifest_path, &entry)?;
                done.insert(entry.index, entry);
                generated += 1;
                report(done.len());
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    drop(results);

    let entries: Vec<ManifestEntry> = done.into_values().collect();
    write_entries(&manifest_path, &entries)?;
    if let Some(e) = failure {
        let reason = e.to_string();
        write_record(&dir, &record(RunStatus::Incomplete, entries.len(), Some(reason.clone())))?;
        tracing::error!(run = %run_id, completed = entries.len(), "run aborted: {reason}");
        return Err(GenError::Incomplete { run_dir: dir, completed: entries.len(), requested: spec.n, reason });
    }
    write_record(&dir, &record(RunStatus::Complete, entries.len(), None))?;
    Ok(BatchOutcome {
        manifest: GenerationManifest { run_id, status: RunStatus::Complete, config, entries },
        dir,
        generated,
        reused,
        warnings,
    })
}

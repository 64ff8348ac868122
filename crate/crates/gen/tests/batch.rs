use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use fairguide_core::manifest::{FusionSource, GenerationManifest, RunStatus, MANIFEST_FILE};
use fairguide_core::resample::TargetSpec;
use fairguide_core::{AttributeCatalog, AttributeDistribution, ProbabilityVector, PromptText};
use fairguide_gen::{
    generate_batch, BackendProfile, BatchOptions, BatchSpec, FixedClock, Fusion, GenError, GeneratedImage,
    GenerationRequest, ImageBackend, MockBackend, Progress,
};
use fairguide_llm::{LlmClient, MockTransport, ProviderConfig};

fn catalog() -> AttributeCatalog {
    serde_json::from_str(r#"{"gender":["male","female","non-binary"],"age":["young","old"]}"#).unwrap()
}

fn spec(target: TargetSpec, n: usize, seed: u64) -> BatchSpec {
    BatchSpec {
        prompt: PromptText::new("A photo of a CEO").unwrap(),
        catalog: catalog(),
        target,
        n,
        seed,
        profile: BackendProfile::sd15(),
    }
}

fn fixed() -> BatchOptions {
    BatchOptions { clock: Arc::new(FixedClock("2025-01-01T00:00:00.000Z".into())), ..Default::default() }
}

fn mock() -> Arc<dyn ImageBackend> {
    Arc::new(MockBackend::new())
}

fn manifest_bytes(dir: &Path) -> Vec<u8> {
    std::fs::read(dir.join(MANIFEST_FILE)).unwrap()
}

fn degenerate() -> TargetSpec {
    let pv = |labels: &[&str], values: &[f64]| {
        ProbabilityVector::new(labels.iter().map(|s| s.to_string()).collect(), values.to_vec()).unwrap()
    };
    TargetSpec::Custom {
        distribution: AttributeDistribution::new(
            [
                ("gender".to_string(), pv(&["male", "female", "non-binary"], &[0.0, 1.0, 0.0])),
                ("age".to_string(), pv(&["young", "old"], &[0.0, 1.0])),
            ]
            .into_iter()
            .collect(),
        ),
    }
}

#[tokio::test]
async fn degenerate_target_gives_identical_assignments() {
    let root = tempfile::tempdir().unwrap();
    let out = generate_batch(&spec(degenerate(), 4, 1), mock(), &Fusion::Fallback, root.path(), &fixed()).await.unwrap();
    assert_eq!(out.manifest.entries.len(), 4);
    for (i, e) in out.manifest.entries.iter().enumerate() {
        assert_eq!(e.index, i);
        assert_eq!(e.seed, 1 + i as u64);
        assert_eq!(e.assignment.get("gender"), Some("female"));
        assert_eq!(e.assignment.get("age"), Some("old"));
        assert_eq!(e.fused_prompt, "A photo of a CEO, female, old");
        assert_eq!(e.fusion_source, FusionSource::Fallback);
        assert!(out.dir.join(&e.image).is_file());
    }
    let loaded = GenerationManifest::load(&out.dir).unwrap();
    assert!(loaded.is_complete());
    assert_eq!(loaded, out.manifest);
}

#[tokio::test]
async fn uniform_frequencies_converge() {
    let root = tempfile::tempdir().unwrap();
    let out = generate_batch(&spec(TargetSpec::Uniform, 1000, 7), mock(), &Fusion::Fallback, root.path(), &fixed())
        .await
        .unwrap();
    for g in ["male", "female", "non-binary"] {
        let f = out.manifest.entries.iter().filter(|e| e.assignment.get("gender") == Some(g)).count() as f64 / 1000.0;
        assert!((f - 1.0 / 3.0).abs() < 0.05, "{g}: {f}");
    }
}

#[tokio::test]
async fn rerun_regenerates_nothing() {
    let root = tempfile::tempdir().unwrap();
    let s = spec(TargetSpec::Uniform, 6, 3);
    let first = generate_batch(&s, mock(), &Fusion::Fallback, root.path(), &fixed()).await.unwrap();
    assert_eq!(first.generated, 6);
    let bytes = manifest_bytes(&first.dir);
    let second = generate_batch(&s, mock(), &Fusion::Fallback, root.path(), &fixed()).await.unwrap();
    assert_eq!((second.generated, second.reused), (0, 6));
    assert_eq!(manifest_bytes(&second.dir), bytes);
}

#[tokio::test]
async fn deleted_entries_are_regenerated_identically() {
    let root = tempfile::tempdir().unwrap();
    let s = spec(TargetSpec::Uniform, 4, 11);
    let first = generate_batch(&s, mock(), &Fusion::Fallback, root.path(), &fixed()).await.unwrap();
    let bytes = manifest_bytes(&first.dir);
    let images: Vec<Vec<u8>> = (0..4).map(|i| std::fs::read(first.dir.join(format!("{i}.png"))).unwrap()).collect();

    let text = String::from_utf8(bytes.clone()).unwrap();
    let kept: String = text.lines().enumerate().filter(|(i, _)| *i != 2 && *i != 3).map(|(_, l)| format!("{l}\n")).collect();
    std::fs::write(first.dir.join(MANIFEST_FILE), kept).unwrap();
    std::fs::remove_file(first.dir.join("3.png")).unwrap();

    let calls = Arc::new(Mutex::new(Vec::new()));
    let recorder: Arc<dyn ImageBackend> = Arc::new(Recording { inner: MockBackend::new(), seeds: calls.clone() });
    let second = generate_batch(&s, recorder, &Fusion::Fallback, root.path(), &fixed()).await.unwrap();
    let mut seeds = calls.lock().unwrap().clone();
    seeds.sort();
    assert_eq!(seeds, vec![13, 14]);
    assert_eq!(second.generated, 2);
    assert_eq!(manifest_bytes(&second.dir), bytes);
    for (i, png) in images.iter().enumerate() {
        assert_eq!(&std::fs::read(second.dir.join(format!("{i}.png"))).unwrap(), png);
    }
}

#[tokio::test]
async fn separate_roots_produce_identical_manifests() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let s = spec(TargetSpec::Uniform, 50, 42);
    let ra = generate_batch(&s, mock(), &Fusion::Fallback, a.path(), &fixed()).await.unwrap();
    let rb = generate_batch(&s, mock(), &Fusion::Fallback, b.path(), &BatchOptions { parallelism: 1, ..fixed() })
        .await
        .unwrap();
    assert_eq!(ra.manifest.run_id, rb.manifest.run_id);
    assert_eq!(manifest_bytes(&ra.dir), manifest_bytes(&rb.dir));
    assert_eq!(std::fs::read(ra.dir.join("run.json")).unwrap(), std::fs::read(rb.dir.join("run.json")).unwrap());
}

#[tokio::test]
async fn system_clock_differs_only_in_timestamps() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let s = spec(TargetSpec::Uniform, 10, 5);
    let ra = generate_batch(&s, mock(), &Fusion::Fallback, a.path(), &BatchOptions::default()).await.unwrap();
    let rb = generate_batch(&s, mock(), &Fusion::Fallback, b.path(), &BatchOptions { parallelism: 8, ..Default::default() })
        .await
        .unwrap();
    let strip = |m: &GenerationManifest| {
        m.entries.iter().map(|e| fairguide_core::manifest::ManifestEntry { timestamp: String::new(), ..e.clone() }).collect::<Vec<_>>()
    };
    assert_eq!(strip(&ra.manifest), strip(&rb.manifest));
}

#[tokio::test]
async fn different_seeds_differ() {
    let root = tempfile::tempdir().unwrap();
    let a = generate_batch(&spec(TargetSpec::Uniform, 20, 1), mock(), &Fusion::Fallback, root.path(), &fixed()).await.unwrap();
    let b = generate_batch(&spec(TargetSpec::Uniform, 20, 2), mock(), &Fusion::Fallback, root.path(), &fixed()).await.unwrap();
    assert_ne!(a.dir, b.dir);
    assert_ne!(
        a.manifest.entries.iter().map(|e| &e.assignment).collect::<Vec<_>>(),
        b.manifest.entries.iter().map(|e| &e.assignment).collect::<Vec<_>>()
    );
}

struct Recording {
    inner: MockBackend,
    seeds: Arc<Mutex<Vec<u64>>>,
}

#[async_trait]
impl ImageBackend for Recording {
    fn id(&self) -> &str {
        "mock"
    }

    async fn generate(&self, r: &GenerationRequest) -> fairguide_gen::Result<GeneratedImage> {
        self.seeds.lock().unwrap().push(r.seed);
        self.inner.generate(r).await
    }
}

/// Fails hard on one seed.
struct Flaky {
    bad_seed: u64,
    calls: AtomicUsize,
}

#[async_trait]
impl ImageBackend for Flaky {
    fn id(&self) -> &str {
        "mock"
    }

    async fn generate(&self, r: &GenerationRequest) -> fairguide_gen::Result<GeneratedImage> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if r.seed == self.bad_seed {
            return Err(GenError::Backend { status: Some(500), message: "out of memory".into() });
        }
        MockBackend::new().generate(r).await
    }
}

#[tokio::test]
async fn hard_failure_leaves_resumable_partial_run() {
    let root = tempfile::tempdir().unwrap();
    let s = spec(TargetSpec::Uniform, 8, 100);
    let flaky: Arc<dyn ImageBackend> = Arc::new(Flaky { bad_seed: 105, calls: AtomicUsize::new(0) });
    let opts = BatchOptions { parallelism: 1, ..fixed() };
    let err = generate_batch(&s, flaky, &Fusion::Fallback, root.path(), &opts).await.unwrap_err();
    let GenError::Incomplete { run_dir, completed, requested, reason } = err else { panic!("{err:?}") };
    assert_eq!((completed, requested), (5, 8));
    assert!(reason.contains("out of memory"));
    let partial = GenerationManifest::load(&run_dir).unwrap();
    assert_eq!(partial.status, RunStatus::Incomplete);
    assert_eq!(partial.entries.len(), 5);
    assert!(!partial.is_complete());

    let resumed = generate_batch(&s, mock(), &Fusion::Fallback, root.path(), &opts).await.unwrap();
    assert_eq!((resumed.generated, resumed.reused), (3, 5));
    let clean = tempfile::tempdir().unwrap();
    let fresh = generate_batch(&s, mock(), &Fusion::Fallback, clean.path(), &opts).await.unwrap();
    assert_eq!(manifest_bytes(&resumed.dir), manifest_bytes(&fresh.dir));
}

#[tokio::test]
async fn llm_fusion_is_recorded() {
    let root = tempfile::tempdir().unwrap();
    let transport = Arc::new(MockTransport::demo());
    let client = LlmClient::new(transport.clone(), ProviderConfig::fusion()).unwrap();
    let out = generate_batch(&spec(degenerate(), 5, 1), mock(), &Fusion::Llm(client), root.path(), &fixed())
        .await
        .unwrap();
    for e in &out.manifest.entries {
        assert_eq!(e.fusion_source, FusionSource::Llm);
        assert_eq!(e.fused_prompt, "A photo of a CEO, depicted as female, old");
    }
    assert_eq!(out.manifest.config.fusion, "llm:gpt-4o-mini-2024-07-18");
    // one distinct assignment, so the cache absorbs the other four
    assert_eq!(transport.calls(), 1);
}

#[tokio::test]
async fn fusion_outage_falls_back_per_entry() {
    let root = tempfile::tempdir().unwrap();
    let client = LlmClient::new(Arc::new(MockTransport::down()), ProviderConfig::fusion()).unwrap();
    let out = generate_batch(&spec(degenerate(), 3, 1), mock(), &Fusion::Llm(client), root.path(), &fixed())
        .await
        .unwrap();
    assert!(out.manifest.entries.iter().all(|e| e.fusion_source == FusionSource::Fallback));
}

#[tokio::test]
async fn progress_is_monotone() {
    let root = tempfile::tempdir().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let sink = seen.clone();
    let opts = BatchOptions { progress: Some(Arc::new(move |p: Progress| sink.lock().unwrap().push(p.completed))), ..fixed() };
    generate_batch(&spec(TargetSpec::Uniform, 12, 9), mock(), &Fusion::Fallback, root.path(), &opts).await.unwrap();
    let seen = seen.lock().unwrap();
    assert_eq!(seen.first(), Some(&0));
    assert_eq!(seen.last(), Some(&12));
    assert!(seen.windows(2).all(|w| w[0] <= w[1]));
}

#[tokio::test]
async fn statistics_target_weights_recorded() {
    let root = tempfile::tempdir().unwrap();
    let cat: AttributeCatalog =
        serde_json::from_str(r#"{"gender":["male","female"],"race":["White","Black","Asian","Hispanic"]}"#).unwrap();
    let s = BatchSpec { catalog: cat, ..spec(TargetSpec::parse("stats:CEO").unwrap(), 2, 1) };
    let out = generate_batch(&s, mock(), &Fusion::Fallback, root.path(), &fixed()).await.unwrap();
    let g = out.manifest.config.distribution.get("gender").unwrap();
    assert!((g.get("male").unwrap() - 0.67).abs() < 1e-12);
    assert!((g.get("female").unwrap() - 0.33).abs() < 1e-12);
    assert_eq!(out.manifest.config.target, "stats:CEO");
}

#[tokio::test]
async fn rejects_bad_input() {
    let root = tempfile::tempdir().unwrap();
    assert!(generate_batch(&spec(TargetSpec::Uniform, 0, 1), mock(), &Fusion::Fallback, root.path(), &fixed()).await.is_err());
    let one: AttributeCatalog = serde_json::from_str(r#"{"gender":["male","female"]}"#).unwrap();
    let s = BatchSpec { catalog: one, ..spec(TargetSpec::Uniform, 2, 1) };
    assert!(generate_batch(&s, mock(), &Fusion::Fallback, root.path(), &fixed()).await.is_err());
}

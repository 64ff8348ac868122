use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fairguide_core::eval::{bootstrap_sp_test, evaluate_run, LabelFile, LabelSource, TestReport, UNLABELED};
use fairguide_core::manifest::GenerationManifest;
use fairguide_core::resample::{build_fair_distribution, TargetSpec};
use fairguide_core::sim::checks::{self, CheckSet};
use fairguide_core::{AttributeCatalog, AttributeDistribution, Execution, ProbabilityVector, PromptText};
use fairguide_gen::{
    generate_batch, BackendProfile, BatchOptions, BatchSpec, Clock, FixedClock, Fusion, GenError, HttpBackend,
    ImageBackend, MockBackend, SystemClock,
};
use fairguide_llm::{
    parse_detection, ChatTransport, HttpTransport, LlmClient, LlmError, MockTransport, ProviderConfig, ResponseCache,
};
use indexmap::IndexMap;

use crate::config::AppConfig;
use crate::service;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_DETECTION_FAILED: i32 = 2;
pub const EXIT_MISSING_KEY: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "fairguide", version, about = "Bias-aware text-to-image generation and evaluation")]
pub struct Cli {
    /// JSON config file; environment variables and flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// LLM response cache (JSON lines).
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,

    #[arg(long, global = true)]
    pub no_cache: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ask the LLM which attribute categories a prompt leaves open.
    Detect(DetectArgs),
    /// Detect, resample, fuse and generate a batch of images.
    Generate(GenerateArgs),
    /// Statistical parity of a run against its target; optional bootstrap comparison.
    Evaluate(EvaluateArgs),
    /// Run the analytic simulator checks.
    Simulate(SimulateArgs),
    /// Serve the session API used by the web UI.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Provider {
    Http,
    Mock,
}

#[derive(Debug, Args)]
pub struct ProviderArgs {
    #[arg(long, value_enum, default_value = "http")]
    pub provider: Provider,

    /// Shorthand for `--provider mock`.
    #[arg(long)]
    pub mock: bool,

    /// Scripted replies for the mock provider: a JSON array of strings, or a
    /// text file used as a single reply.
    #[arg(long)]
    pub script: Option<PathBuf>,

    #[arg(long)]
    pub model: Option<String>,

    #[arg(long)]
    pub retries: Option<usize>,
}

impl ProviderArgs {
    fn provider(&self) -> Provider {
        if self.mock || self.script.is_some() {
            Provider::Mock
        } else {
            self.provider
        }
    }
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    pub prompt: String,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FusionKind {
    Llm,
    Fallback,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    pub prompt: String,

    #[arg(long, default_value_t = 200)]
    pub n: usize,

    /// `uniform`, `stats:OCCUPATION`, `stats:FILE:OCCUPATION` or `custom:FILE`.
    #[arg(long, default_value = "uniform")]
    pub target: String,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, value_enum, default_value = "mock")]
    pub backend: BackendKind,

    /// Use this catalog instead of running detection.
    #[arg(long)]
    pub catalog: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "llm")]
    pub fusion: FusionKind,

    #[command(flatten)]
    pub provider: ProviderArgs,

    /// sd15 or sd35.
    #[arg(long)]
    pub profile: Option<String>,

    #[arg(long)]
    pub runs: Option<PathBuf>,

    #[arg(long)]
    pub parallelism: Option<usize>,

    #[arg(long)]
    pub backend_url: Option<String>,

    /// Stamp every manifest entry with this time instead of the wall clock.
    #[arg(long)]
    pub fixed_timestamp: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run directory.
    #[arg(long)]
    pub manifest: PathBuf,

    /// CSV with header `image_id,category,label`; sampled assignments are used when absent.
    #[arg(long)]
    pub labels: Option<PathBuf>,

    /// Target to compare against; defaults to the run's own target.
    #[arg(long)]
    pub target: Option<String>,

    #[arg(long)]
    pub allow_partial: bool,

    /// Directory for report files; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Second run; tests whether the first run's SP exceeds this one's.
    #[arg(long)]
    pub compare: Option<PathBuf>,

    #[arg(long)]
    pub compare_labels: Option<PathBuf>,

    /// Bootstrap iterations for `--compare`.
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Print JSON instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// prop1, cfg, gradients (fd), fairness or all.
    #[arg(long, default_value = "all")]
    pub check: CheckSet,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,

    #[arg(long)]
    pub runs: Option<PathBuf>,

    /// Use the offline demo provider for detection and fusion.
    #[arg(long)]
    pub mock_llm: bool,

    #[arg(long, value_enum, default_value = "llm")]
    pub fusion: FusionKind,

    /// Session snapshot file, reloaded on start.
    #[arg(long)]
    pub state: Option<PathBuf>,
}

/// Map an error to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<LlmError>() {
            match e {
                LlmError::DetectionFailed { .. } => return EXIT_DETECTION_FAILED,
                LlmError::MissingApiKey { .. } => return EXIT_MISSING_KEY,
                _ => {}
            }
        }
        if let Some(e) = cause.downcast_ref::<GenError>() {
            match e {
                GenError::Incomplete { .. } => return EXIT_PARTIAL,
                GenError::Llm(LlmError::MissingApiKey { .. }) => return EXIT_MISSING_KEY,
                _ => {}
            }
        }
    }
    EXIT_FAILURE
}

pub async fn run(cli: Cli) -> anyhow::Result<i32> {
    let config = AppConfig::load(cli.config.as_deref())?;
    let cache = open_cache(&cli, &config)?;
    match cli.command {
        Command::Detect(args) => detect(args, &config, cache).await,
        Command::Generate(args) => generate(args, config, cache).await,
        Command::Evaluate(args) => evaluate(args),
        Command::Simulate(args) => simulate(args),
        Command::Serve(args) => serve(args, config, cache).await,
    }
}

fn open_cache(cli: &Cli, config: &AppConfig) -> anyhow::Result<Arc<ResponseCache>> {
    if cli.no_cache {
        return Ok(Arc::new(ResponseCache::in_memory()));
    }
    let path = cli.cache.clone().unwrap_or_else(|| config.cache_path.clone());
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(Arc::new(ResponseCache::open(&path).with_context(|| format!("opening cache {}", path.display()))?))
}

fn scripted(path: &Path) -> anyhow::Result<MockTransport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading script {}", path.display()))?;
    Ok(match serde_json::from_str::<Vec<String>>(&text) {
        Ok(replies) => MockTransport::scripted(replies),
        Err(_) => MockTransport::scripted([text]),
    })
}

fn provider_config(base: &ProviderConfig, args: &ProviderArgs) -> ProviderConfig {
    let mut c = base.clone();
    if let Some(m) = &args.model {
        c.model = m.clone();
    }
    if let Some(r) = args.retries {
        c.max_retries = r;
    }
    c
}

fn transport(config: &ProviderConfig, args: &ProviderArgs) -> anyhow::Result<Arc<dyn ChatTransport>> {
    Ok(match args.provider() {
        Provider::Mock => match &args.script {
            Some(p) => Arc::new(scripted(p)?),
            None => Arc::new(MockTransport::demo()),
        },
        Provider::Http => Arc::new(HttpTransport::from_config(config)?),
    })
}

fn detection_client(
    config: &AppConfig,
    args: &ProviderArgs,
    cache: Arc<ResponseCache>,
) -> anyhow::Result<LlmClient> {
    let pc = provider_config(&config.detection, args);
    Ok(LlmClient::new(transport(&pc, args)?, pc)?.with_cache(cache))
}

async fn detect_catalog(client: &LlmClient, prompt: &PromptText) -> anyhow::Result<AttributeCatalog> {
    let r = client.detect_biases(prompt).await.map_err(|e| {
        if let LlmError::DetectionFailed { reason, .. } = &e {
            eprintln!("detection rejected: {reason}");
        }
        e
    })?;
    if r.cached {
        tracing::info!(model = %r.model, "detection served from cache");
    } else {
        tracing::info!(model = %r.model, attempts = r.attempts, latency_ms = r.latency_ms, "detection complete");
    }
    Ok(r.catalog)
}

async fn detect(args: DetectArgs, config: &AppConfig, cache: Arc<ResponseCache>) -> anyhow::Result<i32> {
    let prompt = PromptText::new(args.prompt.clone())?;
    let client = detection_client(config, &args.provider, cache)?;
    let catalog = detect_catalog(&client, &prompt).await?;
    println!("{}", catalog.to_json_pretty());
    Ok(0)
}

async fn generate(args: GenerateArgs, mut config: AppConfig, cache: Arc<ResponseCache>) -> anyhow::Result<i32> {
    if let Some(url) = &args.backend_url {
        config.backend.base_url = url.clone();
    }
    if let Some(p) = args.parallelism {
        config.backend.parallelism = p;
    }
    if let Some(p) = &args.profile {
        config.backend.profile = p.clone();
    }
    let prompt = PromptText::new(args.prompt.clone())?;
    let target = TargetSpec::parse(&args.target).with_context(|| format!("target `{}`", args.target))?;
    let catalog = match &args.catalog {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading catalog {}", path.display()))?;
            parse_detection(&text).map_err(|e| anyhow!("catalog {}: {e}", path.display()))?
        }
        None => detect_catalog(&detection_client(&config, &args.provider, cache.clone())?, &prompt).await?,
    };
    let fusion = match args.fusion {
        FusionKind::Fallback => Fusion::Fallback,
        FusionKind::Llm => {
            let pc = provider_config(&config.fusion, &args.provider);
            Fusion::Llm(LlmClient::new(transport(&pc, &args.provider)?, pc)?.with_cache(cache))
        }
    };
    let profile = BackendProfile::by_name(&config.backend.profile)?;
    let backend: Arc<dyn ImageBackend> = match args.backend {
        BackendKind::Mock => Arc::new(MockBackend::new()),
        BackendKind::Http => Arc::new(HttpBackend::new(config.backend.http_config())?),
    };
    let clock: Arc<dyn Clock> = match &args.fixed_timestamp {
        Some(ts) => Arc::new(FixedClock(ts.clone())),
        None => Arc::new(SystemClock),
    };
    let spec = BatchSpec { prompt, catalog, target, n: args.n, seed: args.seed, profile };
    let options = BatchOptions { parallelism: config.backend.parallelism, clock, progress: None };
    let runs = args.runs.clone().unwrap_or(config.runs_dir.clone());
    match generate_batch(&spec, backend, &fusion, &runs, &options).await {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!(
                "run {}: {} images ({} generated, {} reused)",
                out.manifest.run_id,
                out.manifest.entries.len(),
                out.generated,
                out.reused
            );
            println!("{}", out.dir.display());
            Ok(0)
        }
        Err(e) => {
            if let GenError::Incomplete { run_dir, .. } = &e {
                println!("{}", run_dir.display());
            }
            Err(e.into())
        }
    }
}

fn load_labels(path: &Option<PathBuf>) -> anyhow::Result<Option<LabelFile>> {
    path.as_ref()
        .map(|p| LabelFile::load(p).with_context(|| format!("reading labels {}", p.display())))
        .transpose()
}

fn load_run(dir: &Path, allow_partial: bool) -> anyhow::Result<GenerationManifest> {
    let m = GenerationManifest::load(dir).with_context(|| format!("loading run {}", dir.display()))?;
    if !m.is_complete() && !allow_partial {
        bail!(
            "run {} is incomplete ({}/{} images); pass --allow-partial to evaluate it anyway",
            m.run_id,
            m.entries.len(),
            m.config.n
        );
    }
    Ok(m)
}

/// Labels of one category in target-label spelling, unlabeled images dropped.
fn category_labels(
    m: &GenerationManifest,
    labels: Option<&LabelFile>,
    category: &str,
    target: &ProbabilityVector,
) -> anyhow::Result<Vec<String>> {
    let mut out = Vec::new();
    for e in &m.entries {
        let raw = match labels {
            Some(f) => f.label(&e.image_id(), category).unwrap_or("").to_string(),
            None => e.assignment.get(category).unwrap_or("").to_string(),
        };
        if UNLABELED.iter().any(|u| raw.trim().eq_ignore_ascii_case(u)) {
            continue;
        }
        let label = target
            .labels()
            .iter()
            .find(|l| l.eq_ignore_ascii_case(raw.trim()))
            .ok_or_else(|| anyhow!("run {}: label `{raw}` is not in the `{category}` target", m.run_id))?;
        out.push(label.clone());
    }
    Ok(out)
}

fn evaluate(args: EvaluateArgs) -> anyhow::Result<i32> {
    let manifest = load_run(&args.manifest, args.allow_partial)?;
    let labels = load_labels(&args.labels)?;
    let target: Option<AttributeDistribution> = match &args.target {
        Some(t) => {
            let spec = TargetSpec::parse(t).with_context(|| format!("target `{t}`"))?;
            let fair = build_fair_distribution(&manifest.config.catalog, &spec)?;
            for w in &fair.warnings {
                eprintln!("warning: {w}");
            }
            Some(fair.distribution)
        }
        None => None,
    };
    let source = match &labels {
        Some(f) => LabelSource::External(f),
        None => LabelSource::Assignments,
    };
    let report = evaluate_run(&manifest, source, target.as_ref())?;
    let out = args.out.clone().unwrap_or_else(|| args.manifest.clone());
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("evaluation.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let table = report.to_table();
    std::fs::write(out.join("evaluation.txt"), &table)?;

    let mut comparison: Option<IndexMap<String, TestReport>> = None;
    if let Some(other) = &args.compare {
        let b = load_run(other, args.allow_partial)?;
        let b_labels = load_labels(&args.compare_labels)?;
        let mut tests = IndexMap::new();
        for (category, cat) in &report.categories {
            let la = category_labels(&manifest, labels.as_ref(), category, &cat.target)?;
            let lb = category_labels(&b, b_labels.as_ref(), category, &cat.target)?;
            let t = bootstrap_sp_test(&la, &lb, &cat.target, args.bootstrap, args.seed)
                .with_context(|| format!("bootstrap for `{category}`"))?;
            tests.insert(category.clone(), t);
        }
        std::fs::write(out.join("comparison.json"), serde_json::to_string_pretty(&tests)? + "\n")?;
        comparison = Some(tests);
    }

    if args.json {
        let body = serde_json::json!({ "evaluation": report, "comparison": comparison });
        println!("{}", serde_json::to_string_pretty(&body)?);
    } else {
        print!("{table}");
        if let Some(tests) = &comparison {
            println!("\nbootstrap comparison ({} iterations, seed {})", args.bootstrap, args.seed);
            for (category, t) in tests {
                println!(
                    "  {category}: SP_A={:.4} SP_B={:.4} p={:.3}",
                    t.statistics["sp_a"], t.statistics["sp_b"], t.p_value
                );
            }
        }
    }
    Ok(0)
}

fn simulate(args: SimulateArgs) -> anyhow::Result<i32> {
    let exec = if args.sequential { Execution::Sequential } else { Execution::Parallel };
    let results = checks::run(args.check, args.seed, exec)?;
    for r in &results {
        println!("{}", r.line());
    }
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} checks passed", results.len());
    Ok(if passed == results.len() { 0 } else { EXIT_FAILURE })
}

async fn serve(args: ServeArgs, config: AppConfig, cache: Arc<ResponseCache>) -> anyhow::Result<i32> {
    let provider = ProviderArgs {
        provider: if args.mock_llm { Provider::Mock } else { Provider::Http },
        mock: args.mock_llm,
        script: None,
        model: None,
        retries: None,
    };
    let detector = detection_client(&config, &provider, cache.clone())?;
    let fusion = match args.fusion {
        FusionKind::Fallback => Fusion::Fallback,
        FusionKind::Llm => Fusion::Llm(
            LlmClient::new(transport(&config.fusion, &provider)?, config.fusion.clone())?.with_cache(cache),
        ),
    };
    let http_backend: Option<Arc<dyn ImageBackend>> = Some(Arc::new(HttpBackend::new(config.backend.http_config())?));
    let state = service::AppState::new(service::ServiceConfig {
        detector,
        fusion,
        http_backend,
        profile: BackendProfile::by_name(&config.backend.profile)?,
        runs_root: args.runs.unwrap_or(config.runs_dir),
        parallelism: config.backend.parallelism,
        state_file: args.state,
        clock: Arc::new(SystemClock),
    })?;
    let listener = tokio::net::TcpListener::bind(args.addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, service::router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(0)
}

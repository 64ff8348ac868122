//! Euler-Maruyama integration of the reverse-time variance-preserving SDE
//!
//! `dx = [-1/2 beta(t) x - beta(t) s(x, t)] dt + sqrt(beta(t)) dW`, run from
//! `t = 1` down to `t = 0` on a uniform grid, starting from `N(0, I)`.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gaussian::{component_score, GaussianComponent};
use super::score::{classify, mixture_score, true_score, unconditional_score};
use super::world::MixtureWorld;
use super::NoiseSchedule;
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::rng::{stream, StreamTag};
use crate::types::ProbabilityVector;

pub const DEFAULT_STEPS: usize = 500;
pub const MIN_STEPS: usize = 10;

/// Anything that can provide a score along a reverse trajectory.
///
/// `begin` runs once per trajectory and may draw per-trajectory state (the
/// ancestral attribute); `score` may also draw randomness per step.
pub trait ScoreSource: Sync {
    type Trajectory: Send + Clone;

    fn dimension(&self) -> usize;

    fn schedule(&self) -> NoiseSchedule;

    fn begin(&self, rng: &mut ChaCha8Rng) -> Result<Self::Trajectory>;

    fn score(
        &self,
        traj: &Self::Trajectory,
        x: &DVector<f64>,
        t: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<DVector<f64>>;
}

/// The world's own conditional score `grad log p_t(x | y)` (biased weights).
pub struct ConditionalScore<'a> {
    pub world: &'a MixtureWorld,
    pub prompt: &'a str,
}

impl ScoreSource for ConditionalScore<'_> {
    type Trajectory = ();

    fn dimension(&self) -> usize {
        self.world.dimension()
    }

    fn schedule(&self) -> NoiseSchedule {
        *self.world.schedule()
    }

    fn begin(&self, _: &mut ChaCha8Rng) -> Result<()> {
        Ok(())
    }

    fn score(&self, _: &(), x: &DVector<f64>, t: f64, _: &mut ChaCha8Rng) -> Result<DVector<f64>> {
        true_score(self.world, x, self.prompt, t)
    }
}

/// A single fixed Gaussian target.
pub struct GaussianScore<'a> {
    pub component: &'a GaussianComponent,
    pub schedule: NoiseSchedule,
}

impl ScoreSource for GaussianScore<'_> {
    type Trajectory = ();

    fn dimension(&self) -> usize {
        self.component.dimension()
    }

    fn schedule(&self) -> NoiseSchedule {
        self.schedule
    }

    fn begin(&self, _: &mut ChaCha8Rng) -> Result<()> {
        Ok(())
    }

    fn score(&self, _: &(), x: &DVector<f64>, t: f64, _: &mut ChaCha8Rng) -> Result<DVector<f64>> {
        component_score(x, self.component, &self.schedule, t)
    }
}

/// How attribute weights enter the conditional score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSource {
    /// Full weighted sum over every attribute.
    ExactSum,
    /// Average of `k` component scores with attributes drawn from the weights
    /// afresh at every step.
    MonteCarlo { k: usize },
    /// One attribute drawn per trajectory and held for the whole run.
    Ancestral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    /// Classifier-free guidance scale; 1 means no unconditional term.
    pub scale: f64,
    pub source: WeightSource,
    pub weights: ProbabilityVector,
}

impl GuidanceConfig {
    pub fn new(scale: f64, source: WeightSource, weights: ProbabilityVector) -> Result<Self> {
        if let WeightSource::MonteCarlo { k: 0 } = source {
            return Err(Error::validation("Monte Carlo sample count must be >= 1"));
        }
        if !scale.is_finite() {
            return Err(Error::validation("guidance scale must be finite"));
        }
        Ok(GuidanceConfig { scale, source, weights })
    }
}

/// Latent-variable guided score, optionally combined with classifier-free
/// guidance against the world's unconditional density.
pub struct GuidedScore<'a> {
    world: &'a MixtureWorld,
    prompt: &'a str,
    config: GuidanceConfig,
    aligned: Vec<f64>,
}

impl<'a> GuidedScore<'a> {
    pub fn new(world: &'a MixtureWorld, prompt: &'a str, config: GuidanceConfig) -> Result<Self> {
        let aligned = world.prompt(prompt)?.align_weights(&config.weights)?;
        if let WeightSource::MonteCarlo { k: 0 } = config.source {
            return Err(Error::validation("Monte Carlo sample count must be >= 1"));
        }
        Ok(GuidedScore { world, prompt, config, aligned })
    }

    fn component(&self, z: usize) -> &GaussianComponent {
        &self.world.prompt(self.prompt).expect("checked in new").components[z]
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        draw_index(&self.aligned, rng)
    }
}

pub(crate) fn draw_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            last_positive = i;
        }
        acc += w;
        if u < acc && *w > 0.0 {
            return i;
        }
    }
    last_positive
}

impl ScoreSource for GuidedScore<'_> {
    type Trajectory = Option<usize>;

    fn dimension(&self) -> usize {
        self.world.dimension()
    }

    fn schedule(&self) -> NoiseSchedule {
        *self.world.schedule()
    }

    fn begin(&self, rng: &mut ChaCha8Rng) -> Result<Option<usize>> {
        Ok(match self.config.source {
            WeightSource::Ancestral => Some(self.draw(rng)),
            _ => None,
        })
    }

    fn score(
        &self,
        traj: &Option<usize>,
        x: &DVector<f64>,
        t: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<DVector<f64>> {
        let sched = self.world.schedule();
        let cond = match (self.config.source, traj) {
            (WeightSource::ExactSum, _) => {
                mixture_score(self.world, x, self.prompt, &self.config.weights, t)?
            }
            (WeightSource::MonteCarlo { k }, _) => {
                let mut acc = DVector::zeros(self.dimension());
                for _ in 0..k {
                    let z = self.draw(rng);
                    acc += component_score(x, self.component(z), sched, t)?;
                }
                acc / k as f64
            }
            (WeightSource::Ancestral, Some(z)) => component_score(x, self.component(*z), sched, t)?,
            (WeightSource::Ancestral, None) => {
                return Err(Error::validation("ancestral trajectory has no attribute"))
            }
        };
        let w = self.config.scale;
        if w == 1.0 {
            return Ok(cond);
        }
        Ok(unconditional_score(self.world, x, t)? * (1.0 - w) + cond * w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub execution: Execution,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { steps: DEFAULT_STEPS, execution: Execution::default() }
    }
}

impl SamplerConfig {
    pub fn with_steps(steps: usize) -> Self {
        SamplerConfig { steps, ..Default::default() }
    }

    pub fn execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }
}

fn integrate_one<S: ScoreSource>(
    source: &S,
    steps: usize,
    seed: u64,
    index: usize,
) -> Result<(DVector<f64>, S::Trajectory)> {
    let mut rng = stream(StreamTag::Reverse, seed, index as u64, "");
    let traj = source.begin(&mut rng)?;
    let d = source.dimension();
    let sched = source.schedule();
    let mut x = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let dt = 1.0 / steps as f64;
    for k in 0..steps {
        let t = 1.0 - k as f64 * dt;
        let beta = sched.beta(t);
        let s = source.score(&traj, &x, t, &mut rng)?;
        let drift = (&x * (0.5 * beta) + s * beta) * dt;
        let noise = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)) * (beta * dt).sqrt();
        x += drift + noise;
    }
    Ok((x, traj))
}

fn integrate<S: ScoreSource>(
    source: &S,
    n: usize,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Vec<(DVector<f64>, S::Trajectory)>> {
    if cfg.steps < MIN_STEPS {
        return Err(Error::validation(format!("need at least {MIN_STEPS} steps")));
    }
    if n == 0 {
        return Err(Error::validation("sample count must be >= 1"));
    }
    cfg.execution
        .map_indexed(n, |i| integrate_one(source, cfg.steps, seed, i))
        .into_iter()
        .collect()
}

/// Draw `n` points by reverse integration with `source`. Sample `i` uses the
/// random stream keyed by `(seed, i)`, so output is independent of
/// [`Execution`] mode.
pub fn sample_reverse<S: ScoreSource>(
    source: &S,
    n: usize,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    Ok(integrate(source, n, cfg, seed)?.into_iter().map(|(x, _)| x).collect())
}

/// Single-sample latent guidance: each trajectory draws `z ~ p_fair` once and
/// follows only that attribute's component score.
pub fn sample_ancestral_fair(
    world: &MixtureWorld,
    prompt: &str,
    p_fair: &ProbabilityVector,
    n: usize,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Vec<(DVector<f64>, String)>> {
    let guided = GuidedScore::new(
        world,
        prompt,
        GuidanceConfig::new(1.0, WeightSource::Ancestral, p_fair.clone())?,
    )?;
    let attrs = &world.prompt(prompt)?.attributes;
    Ok(integrate(&guided, n, cfg, seed)?
        .into_iter()
        .map(|(x, z)| (x, attrs[z.expect("ancestral trajectories carry z")].clone()))
        .collect())
}

/// One row of sampler output.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub point: DVector<f64>,
    pub drawn: Option<String>,
    pub classified: String,
    pub seed: u64,
}

pub fn classify_samples(
    world: &MixtureWorld,
    prompt: &str,
    samples: Vec<(DVector<f64>, Option<String>)>,
    seed: u64,
) -> Result<Vec<SampleRecord>> {
    samples
        .into_iter()
        .map(|(point, drawn)| {
            let classified = classify(world, &point, prompt)?;
            Ok(SampleRecord { point, drawn, classified, seed })
        })
        .collect()
}

/// CSV with columns `x0..x{d-1},drawn_z,classified_z,seed`.
pub fn write_samples_csv<W: Write>(out: W, records: &[SampleRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = records.first().map(|r| r.point.len()).unwrap_or(0);
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    header.extend(["drawn_z".into(), "classified_z".into(), "seed".into()]);
    w.write_record(&header)?;
    for r in records {
        let mut row: Vec<String> = r.point.iter().map(|v| format!("{v}")).collect();
        row.push(r.drawn.clone().unwrap_or_default());
        row.push(r.classified.clone());
        row.push(r.seed.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

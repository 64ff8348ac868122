//! Numerical checks of the guidance identities, shared by the CLI
//! `simulate --check` command and the test suites.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gaussian::{component_score, marginal_component, GaussianComponent};
use super::sampler::{sample_ancestral_fair, SamplerConfig};
use super::score::{
    cfg_score, classify, log_density, posterior_weights, prop1_residual, true_score,
    unconditional_log_density, unconditional_score,
};
use super::world::{MixtureWorld, PromptWorld};
use crate::error::Result;
use crate::eval::{empirical_distribution, statistical_parity};
use crate::par::Execution;
use crate::types::ProbabilityVector;

/// Step used by every central-difference comparison.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    /// `<` for upper bounds, `>` for lower bounds.
    pub comparison: String,
    pub threshold: f64,
    pub passed: bool,
}

impl CheckResult {
    fn below(name: &str, value: f64, threshold: f64) -> Self {
        CheckResult {
            name: name.into(),
            value,
            comparison: "<".into(),
            threshold,
            passed: value < threshold,
        }
    }

    fn above(name: &str, value: f64, threshold: f64) -> Self {
        CheckResult {
            name: name.into(),
            value,
            comparison: ">".into(),
            threshold,
            passed: value > threshold,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {}: {:.3e} {} {:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.comparison,
            self.threshold
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CheckSet {
    Prop1,
    Cfg,
    Gradients,
    Fairness,
    #[default]
    All,
}

impl std::str::FromStr for CheckSet {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "prop1" => Ok(CheckSet::Prop1),
            "cfg" => Ok(CheckSet::Cfg),
            "gradients" | "fd" => Ok(CheckSet::Gradients),
            "fairness" => Ok(CheckSet::Fairness),
            "all" => Ok(CheckSet::All),
            other => Err(format!("unknown check `{other}` (prop1, cfg, gradients, fairness, all)")),
        }
    }
}

/// Run one group of checks, or all of them.
pub fn run(set: CheckSet, seed: u64, execution: Execution) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    if matches!(set, CheckSet::Prop1 | CheckSet::All) {
        out.push(posterior_identity(seed, 1000)?);
        out.push(prop1_identical(seed, 200)?);
        out.push(prop1_separated()?);
    }
    if matches!(set, CheckSet::Cfg | CheckSet::All) {
        out.extend(cfg_identities(seed, 1000)?);
    }
    if matches!(set, CheckSet::Gradients | CheckSet::All) {
        out.push(finite_differences(seed, 300)?);
    }
    if matches!(set, CheckSet::Fairness | CheckSet::All) {
        out.extend(fairness(seed, 2000, super::DEFAULT_STEPS, execution)?);
    }
    Ok(out)
}

fn random_world(rng: &mut ChaCha8Rng) -> Result<MixtureWorld> {
    let d = rng.random_range(1..=4);
    let prompts = rng.random_range(1..=3);
    let comps = rng.random_range(2..=4);
    MixtureWorld::random(rng, d, prompts, comps)
}

fn random_point(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Largest `||true_score - sum_z posterior(z) * component_score(z)||` over
/// random worlds, points and times. The right side is summed here from the
/// public per-component pieces.
pub fn posterior_identity(seed: u64, trials: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let world = random_world(&mut rng)?;
        let p = &world.prompts()[rng.random_range(0..world.prompts().len())];
        let x = random_point(&mut rng, world.dimension(), 3.0);
        let t = rng.random_range(0.01..=1.0);
        let post = posterior_weights(&world, &x, &p.id, t)?;
        let mut rhs = DVector::zeros(world.dimension());
        for (c, w) in p.components.iter().zip(post.values()) {
            rhs += component_score(&x, c, world.schedule(), t)? * *w;
        }
        let lhs = true_score(&world, &x, &p.id, t)?;
        worst = worst.max((lhs - rhs).norm());
    }
    Ok(CheckResult::below("posterior-weighted decomposition residual", worst, 1e-10))
}

/// Residual between the exact score and fixed-weight guidance when every
/// component of the prompt is the same Gaussian.
pub fn prop1_identical(seed: u64, trials: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let base = random_world(&mut rng)?;
        let prompts: Vec<PromptWorld> = base
            .prompts()
            .iter()
            .map(|p| PromptWorld {
                components: vec![p.components[0].clone(); p.components.len()],
                ..p.clone()
            })
            .collect();
        let world = MixtureWorld::new(base.dimension(), *base.schedule(), prompts)?;
        let p = &world.prompts()[0];
        let weights = random_weights(&mut rng, &p.attributes)?;
        let x = random_point(&mut rng, world.dimension(), 3.0);
        let t = rng.random_range(0.01..=1.0);
        worst = worst.max(prop1_residual(&world, &x, &p.id, &weights, t)?);
    }
    Ok(CheckResult::below("independence residual, identical components", worst, 1e-10))
}

fn random_weights(rng: &mut ChaCha8Rng, labels: &[String]) -> Result<ProbabilityVector> {
    let raw: Vec<f64> = labels.iter().map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    ProbabilityVector::new(labels.to_vec(), raw.iter().map(|v| v / s).collect())
}

/// Smallest residual over an off-center probe grid in the default world with
/// fair weights: positive values show the independence assumption matters.
pub fn prop1_separated() -> Result<CheckResult> {
    let world = MixtureWorld::default_test_world([0.9, 0.1])?;
    let fair = ProbabilityVector::uniform(&["male", "female"])?;
    let mut least = f64::INFINITY;
    for (x0, x1) in [(1.0, 0.5), (2.0, -1.0), (-1.5, 1.0), (0.5, 2.0), (-3.0, 0.0)] {
        for t in [0.05, 0.2, 0.5] {
            let x = DVector::from_vec(vec![x0, x1]);
            least = least.min(prop1_residual(&world, &x, "ceo", &fair, t)?);
        }
    }
    Ok(CheckResult::above("independence residual, separated components", least, 1e-3))
}

/// Max deviation of `cfg_score(w=1)` from the conditional score and of
/// `cfg_score(w=0)` from the unconditional score.
pub fn cfg_identities(seed: u64, points: usize) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xcf9);
    let mut one: f64 = 0.0;
    let mut zero: f64 = 0.0;
    let mut world = random_world(&mut rng)?;
    for i in 0..points {
        if i % 50 == 0 {
            world = MixtureWorld::random(&mut rng, 2, 3, 2)?;
        }
        let p = &world.prompts()[rng.random_range(0..world.prompts().len())];
        let x = random_point(&mut rng, world.dimension(), 3.0);
        let t = rng.random_range(0.01..=1.0);
        let cond = true_score(&world, &x, &p.id, t)?;
        one = one.max((cfg_score(&world, &x, &p.id, 1.0, t)? - cond).amax());
        let uncond = unconditional_score(&world, &x, t)?;
        zero = zero.max((cfg_score(&world, &x, &p.id, 0.0, t)? - uncond).amax());
    }
    Ok(vec![
        CheckResult::below("guidance w=1 vs conditional score", one, 1e-12),
        CheckResult::below("guidance w=0 vs unconditional score", zero, 1e-12),
    ])
}

fn central_difference(f: impl Fn(&DVector<f64>) -> Result<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += FD_STEP;
        xm[i] -= FD_STEP;
        g[i] = (f(&xp)? - f(&xm)?) / (2.0 * FD_STEP);
    }
    Ok(g)
}

fn relative_error(analytic: &DVector<f64>, numeric: &DVector<f64>) -> f64 {
    (analytic - numeric).amax() / analytic.amax().max(1.0)
}

/// Worst relative gap between analytic scores (component, conditional,
/// unconditional) and central differences of the matching log densities.
pub fn finite_differences(seed: u64, trials: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let world = random_world(&mut rng)?;
        let p = &world.prompts()[rng.random_range(0..world.prompts().len())];
        let x = random_point(&mut rng, world.dimension(), 2.0);
        let t = rng.random_range(0.02..=1.0);
        let comp: &GaussianComponent = &p.components[0];
        let marg = marginal_component(comp, world.schedule(), t)?;
        let fd = central_difference(|y| marg.log_density(y), &x)?;
        worst = worst.max(relative_error(&component_score(&x, comp, world.schedule(), t)?, &fd));
        let fd = central_difference(|y| log_density(&world, y, &p.id, t), &x)?;
        worst = worst.max(relative_error(&true_score(&world, &x, &p.id, t)?, &fd));
        let fd = central_difference(|y| unconditional_log_density(&world, y, t), &x)?;
        worst = worst.max(relative_error(&unconditional_score(&world, &x, t)?, &fd));
    }
    Ok(CheckResult::below("analytic vs central-difference score", worst, 1e-5))
}

/// SP values of a sampled run against the fair target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessOutcome {
    pub sp_fair: f64,
    pub sp_bias: f64,
    pub fair_frequencies: ProbabilityVector,
    pub bias_frequencies: ProbabilityVector,
}

/// Sample `n` points with single-draw guidance under fair weights and under
/// the world's biased weights, classify each, and measure SP to uniform.
pub fn fairness_outcome(seed: u64, n: usize, steps: usize, execution: Execution) -> Result<FairnessOutcome> {
    let world = MixtureWorld::default_test_world([0.9, 0.1])?;
    let prompt = world.prompt("ceo")?;
    let fair = ProbabilityVector::uniform(&prompt.attributes)?;
    let bias = prompt.bias();
    let cfg = SamplerConfig::with_steps(steps).execution(execution);
    let measure = |weights: &ProbabilityVector, seed: u64| -> Result<ProbabilityVector> {
        let samples = sample_ancestral_fair(&world, "ceo", weights, n, &cfg, seed)?;
        let labels = samples
            .iter()
            .map(|(x, _)| classify(&world, x, "ceo"))
            .collect::<Result<Vec<_>>>()?;
        empirical_distribution(&labels, &prompt.attributes)
    };
    let fair_frequencies = measure(&fair, seed)?;
    let bias_frequencies = measure(&bias, seed.wrapping_add(1))?;
    Ok(FairnessOutcome {
        sp_fair: statistical_parity(&fair_frequencies, &fair)?,
        sp_bias: statistical_parity(&bias_frequencies, &fair)?,
        fair_frequencies,
        bias_frequencies,
    })
}

pub fn fairness(seed: u64, n: usize, steps: usize, execution: Execution) -> Result<Vec<CheckResult>> {
    let o = fairness_outcome(seed, n, steps, execution)?;
    Ok(vec![
        CheckResult::below("SP of fair-guided samples", o.sp_fair, 0.05),
        CheckResult::above("SP of bias-weighted samples", o.sp_bias, 0.45),
        CheckResult::above("SP reduction", o.sp_bias - o.sp_fair, 0.3),
    ])
}

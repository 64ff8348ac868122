use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gaussian::GaussianComponent;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::types::ProbabilityVector;

/// One prompt of the simulated world: an attribute set, a Gaussian per
/// attribute, and the attribute weights the "model" has absorbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptWorld {
    pub id: String,
    /// Relative weight of this prompt in the unconditional density.
    #[serde(default = "one")]
    pub prior: f64,
    pub attributes: Vec<String>,
    pub components: Vec<GaussianComponent>,
    pub bias_weights: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

impl PromptWorld {
    pub fn bias(&self) -> ProbabilityVector {
        ProbabilityVector::new(self.attributes.clone(), self.bias_weights.clone())
            .expect("validated on construction")
    }

    pub fn attribute_index(&self, z: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == z)
    }

    pub fn component(&self, z: &str) -> Option<&GaussianComponent> {
        self.attribute_index(z).map(|i| &self.components[i])
    }

    /// Reorder `weights` to this prompt's attribute order. The label sets must
    /// coincide exactly.
    pub fn align_weights(&self, weights: &ProbabilityVector) -> Result<Vec<f64>> {
        if weights.len() != self.attributes.len() {
            return Err(Error::LabelMismatch {
                left: weights.labels().to_vec(),
                right: self.attributes.clone(),
            });
        }
        self.attributes
            .iter()
            .map(|a| {
                weights.get(a).ok_or_else(|| Error::LabelMismatch {
                    left: weights.labels().to_vec(),
                    right: self.attributes.clone(),
                })
            })
            .collect()
    }
}

/// Ground truth for the simulator: every conditional density is a finite
/// Gaussian mixture, so every score is available in closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWorld", into = "RawWorld")]
pub struct MixtureWorld {
    dimension: usize,
    schedule: NoiseSchedule,
    prompts: Vec<PromptWorld>,
}

#[derive(Serialize, Deserialize)]
struct RawWorld {
    dimension: usize,
    #[serde(default)]
    schedule: NoiseSchedule,
    prompts: Vec<PromptWorld>,
}

impl TryFrom<RawWorld> for MixtureWorld {
    type Error = Error;
    fn try_from(raw: RawWorld) -> Result<Self> {
        MixtureWorld::new(raw.dimension, raw.schedule, raw.prompts)
    }
}

impl From<MixtureWorld> for RawWorld {
    fn from(w: MixtureWorld) -> Self {
        RawWorld { dimension: w.dimension, schedule: w.schedule, prompts: w.prompts }
    }
}

impl MixtureWorld {
    pub fn new(dimension: usize, schedule: NoiseSchedule, prompts: Vec<PromptWorld>) -> Result<Self> {
        NoiseSchedule::new(schedule.beta_min, schedule.beta_max)?;
        if prompts.is_empty() {
            return Err(Error::validation("world has no prompts"));
        }
        for p in &prompts {
            if p.attributes.is_empty() {
                return Err(Error::validation(format!("prompt `{}` has no attributes", p.id)));
            }
            if p.components.len() != p.attributes.len() {
                return Err(Error::validation(format!(
                    "prompt `{}`: {} attributes but {} components",
                    p.id,
                    p.attributes.len(),
                    p.components.len()
                )));
            }
            if let Some(c) = p.components.iter().find(|c| c.dimension() != dimension) {
                return Err(Error::Dimension { expected: dimension, found: c.dimension() });
            }
            ProbabilityVector::new(p.attributes.clone(), p.bias_weights.clone())?;
            if !(p.prior > 0.0 && p.prior.is_finite()) {
                return Err(Error::validation(format!("prompt `{}` prior must be positive", p.id)));
            }
        }
        let mut ids: Vec<&str> = prompts.iter().map(|p| p.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("duplicate prompt id"));
        }
        Ok(MixtureWorld { dimension, schedule, prompts })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn prompts(&self) -> &[PromptWorld] {
        &self.prompts
    }

    pub fn prompt(&self, id: &str) -> Result<&PromptWorld> {
        self.prompts
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| Error::NotFound(format!("prompt `{id}`")))
    }

    /// Normalized prompt priors, in prompt order.
    pub fn prompt_priors(&self) -> Vec<f64> {
        let total: f64 = self.prompts.iter().map(|p| p.prior).sum();
        self.prompts.iter().map(|p| p.prior / total).collect()
    }

    /// Copy of the world with one prompt's bias weights replaced.
    pub fn with_bias(&self, prompt: &str, weights: &ProbabilityVector) -> Result<Self> {
        let mut w = self.clone();
        let p = w
            .prompts
            .iter_mut()
            .find(|p| p.id == prompt)
            .ok_or_else(|| Error::NotFound(format!("prompt `{prompt}`")))?;
        p.bias_weights = p.align_weights(weights)?;
        Ok(w)
    }

    /// Single prompt `"ceo"` with attributes `male`/`female` at `(+-offset, 0)`,
    /// identity covariances, and the given bias weights.
    pub fn two_cluster(offset: f64, bias: [f64; 2]) -> Result<Self> {
        MixtureWorld::new(
            2,
            NoiseSchedule::default(),
            vec![PromptWorld {
                id: "ceo".into(),
                prior: 1.0,
                attributes: vec!["male".into(), "female".into()],
                components: vec![
                    GaussianComponent::isotropic(&[offset, 0.0], 1.0)?,
                    GaussianComponent::isotropic(&[-offset, 0.0], 1.0)?,
                ],
                bias_weights: bias.to_vec(),
            }],
        )
    }

    /// The default test world: two unit-variance clusters at `(+-3, 0)`.
    pub fn default_test_world(bias: [f64; 2]) -> Result<Self> {
        MixtureWorld::two_cluster(3.0, bias)
    }

    /// Random world for property checks: means in `[-3, 3]^d`, covariances
    /// `A A^T + 0.2 I` with standard-normal `A`, random bias and prompt weights.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        dimension: usize,
        prompts: usize,
        components: usize,
    ) -> Result<Self> {
        let prompts = (0..prompts)
            .map(|p| {
                let comps = (0..components)
                    .map(|_| random_component(rng, dimension))
                    .collect::<Result<Vec<_>>>()?;
                let raw: Vec<f64> = (0..components).map(|_| rng.random_range(0.05..1.0)).collect();
                let total: f64 = raw.iter().sum();
                Ok(PromptWorld {
                    id: format!("p{p}"),
                    prior: rng.random_range(0.2..1.0),
                    attributes: (0..components).map(|k| format!("z{k}")).collect(),
                    components: comps,
                    bias_weights: raw.iter().map(|v| v / total).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MixtureWorld::new(dimension, NoiseSchedule::default(), prompts)
    }
}

fn random_component<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Result<GaussianComponent> {
    let mean = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut cov = &a * a.transpose() * 0.5 + DMatrix::identity(d, d) * 0.2;
    cov = (&cov + cov.transpose()) * 0.5;
    GaussianComponent::new(mean, cov)
}

//! Analytic Gaussian-mixture diffusion world.
//!
//! Every density here is a finite mixture of Gaussians pushed through a
//! variance-preserving forward process, so conditional, unconditional and
//! per-attribute scores are all closed-form. That makes it possible to check
//! the score decomposition identities and the effect of swapping attribute
//! weights numerically instead of by argument.

mod gaussian;
mod sampler;
mod schedule;
mod score;
mod world;

pub mod checks;

pub use gaussian::{component_score, marginal_component, GaussianComponent};
pub use sampler::{
    classify_samples, sample_ancestral_fair, sample_reverse, write_samples_csv, ConditionalScore,
    GaussianScore, GuidanceConfig, GuidedScore, SampleRecord, SamplerConfig, ScoreSource,
    WeightSource, DEFAULT_STEPS, MIN_STEPS,
};
pub use schedule::NoiseSchedule;
pub use score::{
    cfg_score, classify, log_density, mixture_score, posterior_weights, prop1_residual,
    true_score, unconditional_log_density, unconditional_score,
};
pub use world::{MixtureWorld, PromptWorld};

//! Closed-form scores of the simulated world.
//!
//! For a prompt `y` with attributes `z`, the noised conditional density is
//! `p_t(x|y) = sum_z p_bias(z|y) N(x; mu_t(z), Sigma_t(z))`. Its score is the
//! posterior-weighted mixture of component scores; the latent-guidance
//! estimate instead weights component scores by a fixed attribute
//! distribution. [`prop1_residual`] measures the gap between the two.

use nalgebra::DVector;

use super::gaussian::{check_dim, marginal_component, Factored};
use super::world::{MixtureWorld, PromptWorld};
use crate::error::{Error, Result};
use crate::types::ProbabilityVector;

fn factored_marginals(world: &MixtureWorld, p: &PromptWorld, t: f64) -> Result<Vec<Factored>> {
    p.components
        .iter()
        .map(|c| marginal_component(c, world.schedule(), t)?.factor())
        .collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `log p(z) + log N(x; mu_t(z), Sigma_t(z))` for every attribute.
fn log_joint(world: &MixtureWorld, p: &PromptWorld, x: &DVector<f64>, t: f64) -> Result<Vec<f64>> {
    check_dim(world.dimension(), x)?;
    let marg = factored_marginals(world, p, t)?;
    Ok(marg
        .iter()
        .zip(&p.bias_weights)
        .map(|(m, w)| w.ln() + m.log_density(x))
        .collect())
}

fn softmax(logs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logs);
    logs.iter().map(|l| (l - lse).exp()).collect()
}

fn weighted_scores(
    world: &MixtureWorld,
    p: &PromptWorld,
    x: &DVector<f64>,
    weights: &[f64],
    t: f64,
) -> Result<DVector<f64>> {
    check_dim(world.dimension(), x)?;
    let marg = factored_marginals(world, p, t)?;
    let mut out = DVector::zeros(world.dimension());
    for (m, &w) in marg.iter().zip(weights) {
        if w != 0.0 {
            out += m.score(x) * w;
        }
    }
    Ok(out)
}

/// Latent-guidance score: `sum_z weights(z) * grad log p_t(x | z, y)`.
pub fn mixture_score(
    world: &MixtureWorld,
    x: &DVector<f64>,
    prompt: &str,
    weights: &ProbabilityVector,
    t: f64,
) -> Result<DVector<f64>> {
    let p = world.prompt(prompt)?;
    let w = p.align_weights(weights)?;
    weighted_scores(world, p, x, &w, t)
}

/// Posterior `p(z | x, y)` at time `t` under the world's bias weights.
pub fn posterior_weights(
    world: &MixtureWorld,
    x: &DVector<f64>,
    prompt: &str,
    t: f64,
) -> Result<ProbabilityVector> {
    let p = world.prompt(prompt)?;
    let logs = log_joint(world, p, x, t)?;
    let mut post = softmax(&logs);
    // absorb rounding so the vector validates
    let total: f64 = post.iter().sum();
    post.iter_mut().for_each(|v| *v /= total);
    ProbabilityVector::new(p.attributes.clone(), post)
}

/// `log p_t(x | y)` of the full conditional mixture.
pub fn log_density(world: &MixtureWorld, x: &DVector<f64>, prompt: &str, t: f64) -> Result<f64> {
    let p = world.prompt(prompt)?;
    Ok(log_sum_exp(&log_joint(world, p, x, t)?))
}

/// Exact conditional score `grad log p_t(x | y)`.
pub fn true_score(world: &MixtureWorld, x: &DVector<f64>, prompt: &str, t: f64) -> Result<DVector<f64>> {
    let p = world.prompt(prompt)?;
    let resp = softmax(&log_joint(world, p, x, t)?);
    weighted_scores(world, p, x, &resp, t)
}

fn unconditional_logs(world: &MixtureWorld, x: &DVector<f64>, t: f64) -> Result<Vec<(usize, Vec<f64>)>> {
    let priors = world.prompt_priors();
    world
        .prompts()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let logs = log_joint(world, p, x, t)?;
            Ok((i, logs.into_iter().map(|l| l + priors[i].ln()).collect()))
        })
        .collect()
}

/// `log p_t(x)` where prompts are mixed by their normalized priors.
pub fn unconditional_log_density(world: &MixtureWorld, x: &DVector<f64>, t: f64) -> Result<f64> {
    let all: Vec<f64> = unconditional_logs(world, x, t)?
        .into_iter()
        .flat_map(|(_, l)| l)
        .collect();
    Ok(log_sum_exp(&all))
}

/// Unconditional score `grad log p_t(x)`.
pub fn unconditional_score(world: &MixtureWorld, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    let per_prompt = unconditional_logs(world, x, t)?;
    let flat: Vec<f64> = per_prompt.iter().flat_map(|(_, l)| l.iter().copied()).collect();
    let lse = log_sum_exp(&flat);
    let mut out = DVector::zeros(world.dimension());
    for (i, logs) in per_prompt {
        let p = &world.prompts()[i];
        let resp: Vec<f64> = logs.iter().map(|l| (l - lse).exp()).collect();
        out += weighted_scores(world, p, x, &resp, t)?;
    }
    Ok(out)
}

/// `||true_score - mixture_score(weights)||_2`; zero when the attribute
/// posterior does not depend on `x`.
pub fn prop1_residual(
    world: &MixtureWorld,
    x: &DVector<f64>,
    prompt: &str,
    weights: &ProbabilityVector,
    t: f64,
) -> Result<f64> {
    let exact = true_score(world, x, prompt, t)?;
    let approx = mixture_score(world, x, prompt, weights, t)?;
    Ok((exact - approx).norm())
}

/// Classifier-free guidance: `(1 - w) * grad log p_t(x) + w * grad log p_t(x | y)`.
pub fn cfg_score(
    world: &MixtureWorld,
    x: &DVector<f64>,
    prompt: &str,
    w: f64,
    t: f64,
) -> Result<DVector<f64>> {
    let cond = true_score(world, x, prompt, t)?;
    if w == 1.0 {
        return Ok(cond);
    }
    let uncond = unconditional_score(world, x, t)?;
    Ok(uncond * (1.0 - w) + cond * w)
}

/// Maximum-a-posteriori attribute at `t = 0`; ties go to the earlier attribute.
pub fn classify(world: &MixtureWorld, x: &DVector<f64>, prompt: &str) -> Result<String> {
    let p = world.prompt(prompt)?;
    let logs = log_joint(world, p, x, 0.0)?;
    let mut best = 0;
    for (i, l) in logs.iter().enumerate() {
        if *l > logs[best] {
            best = i;
        }
    }
    if logs[best].is_nan() {
        return Err(Error::validation("posterior is undefined at this point"));
    }
    Ok(p.attributes[best].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::gaussian::{component_score, GaussianComponent};
    use crate::sim::schedule::NoiseSchedule;
    use crate::sim::world::PromptWorld;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pv(labels: &[&str], values: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(labels.iter().map(|s| s.to_string()).collect(), values.to_vec()).unwrap()
    }

    fn fd_grad(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
        let h = 1e-5;
        DVector::from_fn(x.len(), |i, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
    }

    #[test]
    fn symmetric_pair_at_origin_is_zero() {
        let w = MixtureWorld::default_test_world([0.5, 0.5]).unwrap();
        let s = mixture_score(&w, &dvector![0.0, 0.0], "ceo", &pv(&["male", "female"], &[0.5, 0.5]), 0.4)
            .unwrap();
        assert!(s.amax() < 1e-15);
    }

    #[test]
    fn degenerate_weights_pick_one_component() {
        let w = MixtureWorld::default_test_world([0.5, 0.5]).unwrap();
        let x = dvector![0.3, -1.2];
        let s = mixture_score(&w, &x, "ceo", &pv(&["male", "female"], &[0.0, 1.0]), 0.2).unwrap();
        let c = component_score(&x, w.prompt("ceo").unwrap().component("female").unwrap(), w.schedule(), 0.2)
            .unwrap();
        assert_eq!(s, c);
    }

    #[test]
    fn mixture_score_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = MixtureWorld::random(&mut rng, 2, 1, 3).unwrap();
        let p = &w.prompts()[0];
        let weights = pv(&["z0", "z1", "z2"], &[0.2, 0.5, 0.3]);
        let x = dvector![0.4, -0.7];
        let t = 0.35;
        let got = mixture_score(&w, &x, "p0", &weights, t).unwrap();
        let mut want = DVector::zeros(2);
        for (k, c) in p.components.iter().enumerate() {
            want += component_score(&x, c, w.schedule(), t).unwrap() * [0.2, 0.5, 0.3][k];
        }
        assert!((got - want).amax() < 1e-12);
    }

    #[test]
    fn mismatched_weights_rejected() {
        let w = MixtureWorld::default_test_world([0.5, 0.5]).unwrap();
        let bad = pv(&["male", "other"], &[0.5, 0.5]);
        assert!(mixture_score(&w, &dvector![0.0, 0.0], "ceo", &bad, 0.5).is_err());
    }

    #[test]
    fn posterior_dominance_and_indistinguishable() {
        let w = MixtureWorld::two_cluster(10.0, [0.5, 0.5]).unwrap();
        let post = posterior_weights(&w, &dvector![10.0, 0.0], "ceo", 0.0).unwrap();
        assert!(post.values()[0] > 1.0 - 1e-6);

        let same = MixtureWorld::two_cluster(0.0, [0.5, 0.5]).unwrap();
        let post = posterior_weights(&same, &dvector![1.7, -0.2], "ceo", 0.3).unwrap();
        assert_eq!(post.values(), &[0.5, 0.5]);
    }

    #[test]
    fn posterior_matches_naive_bayes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let w = MixtureWorld::random(&mut rng, 2, 1, 3).unwrap();
            let p = &w.prompts()[0];
            let x = dvector![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let t = rng.random_range(0.05..1.0);
            let dens: Vec<f64> = p
                .components
                .iter()
                .zip(&p.bias_weights)
                .map(|(c, b)| {
                    let m = marginal_component(c, w.schedule(), t).unwrap();
                    b * m.log_density(&x).unwrap().exp()
                })
                .collect();
            let total: f64 = dens.iter().sum();
            let post = posterior_weights(&w, &x, "p0", t).unwrap();
            for (a, b) in post.values().iter().zip(&dens) {
                assert!((a - b / total).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn posterior_survives_underflow() {
        let w = MixtureWorld::two_cluster(200.0, [0.5, 0.5]).unwrap();
        let post = posterior_weights(&w, &dvector![150.0, 0.0], "ceo", 0.0).unwrap();
        assert_eq!(post.values()[0], 1.0);
    }

    #[test]
    fn single_component_true_score() {
        let w = MixtureWorld::new(
            2,
            NoiseSchedule::default(),
            vec![PromptWorld {
                id: "solo".into(),
                prior: 1.0,
                attributes: vec!["only".into()],
                components: vec![GaussianComponent::isotropic(&[1.0, 2.0], 0.5).unwrap()],
                bias_weights: vec![1.0],
            }],
        )
        .unwrap();
        let x = dvector![0.1, 0.2];
        let a = true_score(&w, &x, "solo", 0.4).unwrap();
        let b = component_score(&x, &w.prompts()[0].components[0], w.schedule(), 0.4).unwrap();
        assert!((a - b).amax() < 1e-14);
    }

    #[test]
    fn true_score_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let w = MixtureWorld::random(&mut rng, 2, 2, 3).unwrap();
            let x = dvector![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let t = rng.random_range(0.01..1.0);
            let g = true_score(&w, &x, "p1", t).unwrap();
            let fd = fd_grad(|y| log_density(&w, y, "p1", t).unwrap(), &x);
            assert!((g.clone() - fd).norm() / g.norm().max(1.0) < 1e-6);

            let g = unconditional_score(&w, &x, t).unwrap();
            let fd = fd_grad(|y| unconditional_log_density(&w, y, t).unwrap(), &x);
            assert!((g.clone() - fd).norm() / g.norm().max(1.0) < 1e-6);
        }
    }

    #[test]
    fn true_score_differs_from_prior_mixture_off_symmetry() {
        let w = MixtureWorld::default_test_world([0.9, 0.1]).unwrap();
        let bias = w.prompt("ceo").unwrap().bias();
        for x in [dvector![1.0, 0.5], dvector![-2.0, 1.0], dvector![0.5, 0.0]] {
            let r = prop1_residual(&w, &x, "ceo", &bias, 0.1).unwrap();
            assert!(r > 1e-3, "residual {r} at {x}");
        }
    }

    #[test]
    fn residual_zero_for_identical_components_and_posterior_weights() {
        let w = MixtureWorld::two_cluster(0.0, [0.9, 0.1]).unwrap();
        let bias = w.prompt("ceo").unwrap().bias();
        assert!(prop1_residual(&w, &dvector![0.7, -2.0], "ceo", &bias, 0.2).unwrap() < 1e-10);

        let w = MixtureWorld::default_test_world([0.9, 0.1]).unwrap();
        let x = dvector![0.4, 0.3];
        let post = posterior_weights(&w, &x, "ceo", 0.25).unwrap();
        assert!(prop1_residual(&w, &x, "ceo", &post, 0.25).unwrap() < 1e-12);
    }

    #[test]
    fn cfg_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = MixtureWorld::random(&mut rng, 2, 3, 2).unwrap();
        let x = dvector![0.3, 0.9];
        let t = 0.6;
        assert_eq!(cfg_score(&w, &x, "p0", 1.0, t).unwrap(), true_score(&w, &x, "p0", t).unwrap());
        let u = unconditional_score(&w, &x, t).unwrap();
        assert!((cfg_score(&w, &x, "p0", 0.0, t).unwrap() - u).amax() < 1e-12);

        let single = MixtureWorld::default_test_world([0.7, 0.3]).unwrap();
        let ts = true_score(&single, &x, "ceo", t).unwrap();
        for scale in [-1.0, 0.0, 2.0, 7.5] {
            let c = cfg_score(&single, &x, "ceo", scale, t).unwrap();
            assert!((c - &ts).amax() < 1e-10);
        }
    }

    #[test]
    fn classify_tie_break_and_dominance() {
        let w = MixtureWorld::two_cluster(10.0, [0.5, 0.5]).unwrap();
        assert_eq!(classify(&w, &dvector![-10.0, 0.0], "ceo").unwrap(), "female");
        assert_eq!(classify(&w, &dvector![10.0, 0.0], "ceo").unwrap(), "male");
        assert_eq!(classify(&w, &dvector![0.0, 0.0], "ceo").unwrap(), "male");
    }

    #[test]
    fn linear_in_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w = MixtureWorld::random(&mut rng, 2, 1, 3).unwrap();
        let u = [0.1, 0.6, 0.3];
        let v = [0.5, 0.25, 0.25];
        let lam = 0.37;
        let mix: Vec<f64> = u.iter().zip(&v).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
        let labels = ["z0", "z1", "z2"];
        let x = dvector![0.2, -0.4];
        let su = mixture_score(&w, &x, "p0", &pv(&labels, &u), 0.5).unwrap();
        let sv = mixture_score(&w, &x, "p0", &pv(&labels, &v), 0.5).unwrap();
        let total: f64 = mix.iter().sum();
        let mix: Vec<f64> = mix.iter().map(|m| m / total).collect();
        let sm = mixture_score(&w, &x, "p0", &pv(&labels, &mix), 0.5).unwrap();
        assert!((sm - (su * lam + sv * (1.0 - lam))).amax() < 1e-12);
    }
}

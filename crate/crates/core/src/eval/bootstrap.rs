use rand::Rng;

use super::parity::sp_values;
use super::report::TestReport;
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::rng::{stream, StreamTag};
use crate::types::ProbabilityVector;

/// One-sided bootstrap test of `SP_A > SP_B` against a common target.
///
/// Each iteration resamples both lists with replacement at their own sizes
/// and records `D* = SP*_A - SP*_B`; the p-value is the fraction of draws with
/// `D* <= 0`. Iteration `i` always uses the same substream, so the result is
/// independent of thread count.
pub fn bootstrap_sp_test<S: AsRef<str>>(
    labels_a: &[S],
    labels_b: &[S],
    target: &ProbabilityVector,
    n_boot: usize,
    seed: u64,
) -> Result<TestReport> {
    bootstrap_sp_test_with(labels_a, labels_b, target, n_boot, seed, Execution::default())
}

pub fn bootstrap_sp_test_with<S: AsRef<str>>(
    labels_a: &[S],
    labels_b: &[S],
    target: &ProbabilityVector,
    n_boot: usize,
    seed: u64,
    execution: Execution,
) -> Result<TestReport> {
    if labels_a.is_empty() || labels_b.is_empty() {
        return Err(Error::validation("bootstrap needs two non-empty label lists"));
    }
    if n_boot == 0 {
        return Err(Error::validation("n_boot must be at least 1"));
    }
    let a = encode(labels_a, target)?;
    let b = encode(labels_b, target)?;
    let k = target.len();
    let t = target.values();

    let diffs = execution.map_indexed(n_boot, |i| {
        let mut rng = stream(StreamTag::Bootstrap, seed, i as u64, "");
        let sa = resampled_sp(&a, k, t, &mut rng);
        let sb = resampled_sp(&b, k, t, &mut rng);
        sa - sb
    });
    let hits = diffs.iter().filter(|&&d| d <= 0.0).count();
    let p = hits as f64 / n_boot as f64;

    let observed_a = sp_values(&frequencies(&a, k), t);
    let observed_b = sp_values(&frequencies(&b, k), t);
    let mean_diff = diffs.iter().sum::<f64>() / n_boot as f64;
    Ok(TestReport::new("bootstrap_sp", p)?
        .stat("sp_a", observed_a)
        .stat("sp_b", observed_b)
        .stat("sp_difference", observed_a - observed_b)
        .stat("mean_bootstrap_difference", mean_diff)
        .param("n_boot", n_boot)
        .param("n_a", labels_a.len())
        .param("n_b", labels_b.len())
        .param("alternative", "sp_a > sp_b")
        .with_seed(seed))
}

impl TestReport {
    fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

fn encode<S: AsRef<str>>(labels: &[S], target: &ProbabilityVector) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|l| {
            let l = l.as_ref();
            target
                .labels()
                .iter()
                .position(|t| t == l)
                .ok_or_else(|| Error::UnknownLabel { label: l.to_string() })
        })
        .collect()
}

fn frequencies(idx: &[usize], k: usize) -> Vec<f64> {
    let mut counts = vec![0.0; k];
    for &i in idx {
        counts[i] += 1.0;
    }
    let n = idx.len() as f64;
    counts.iter_mut().for_each(|c| *c /= n);
    counts
}

fn resampled_sp<R: Rng>(idx: &[usize], k: usize, target: &[f64], rng: &mut R) -> f64 {
    let n = idx.len();
    let mut counts = vec![0.0; k];
    for _ in 0..n {
        counts[idx[rng.random_range(0..n)]] += 1.0;
    }
    counts.iter_mut().for_each(|c| *c /= n as f64);
    sp_values(&counts, target)
}

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::report::TestReport;
use crate::error::{Error, Result};

/// Largest combined sample size routed to exact enumeration by `Auto`.
pub const EXACT_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MwMethod {
    #[default]
    Auto,
    Exact,
    Normal,
}

/// One-sided Mann-Whitney U test of "xs is stochastically greater than ys".
pub fn mann_whitney_one_sided(xs: &[f64], ys: &[f64]) -> Result<TestReport> {
    mann_whitney_with(xs, ys, MwMethod::Auto)
}

pub fn mann_whitney_with(xs: &[f64], ys: &[f64], method: MwMethod) -> Result<TestReport> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::validation("Mann-Whitney needs two non-empty samples"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::validation("Mann-Whitney scores must be finite"));
    }
    let (m, n) = (xs.len(), ys.len());
    let ranked = midranks(xs, ys);
    let rank_sum: f64 = ranked.ranks[..m].iter().sum();
    let u = rank_sum - (m * (m + 1)) as f64 / 2.0;

    let exact = match method {
        MwMethod::Auto => m + n <= EXACT_LIMIT && !ranked.has_ties,
        MwMethod::Exact => {
            if ranked.has_ties {
                return Err(Error::validation("exact Mann-Whitney path requires untied scores"));
            }
            true
        }
        MwMethod::Normal => false,
    };
    let p = if exact {
        exact_upper_tail(m, n, u.round() as usize)
    } else {
        normal_upper_tail(m, n, u, ranked.tie_term)
    };
    Ok(TestReport::new("mann_whitney_one_sided", p)?
        .stat("u", u)
        .stat("rank_sum_x", rank_sum)
        .param("method", if exact { "exact" } else { "normal" })
        .param("continuity_correction", if exact { 0.0 } else { 0.5 })
        .param("n_x", m)
        .param("n_y", n)
        .param("alternative", "x > y"))
}

struct Ranked {
    ranks: Vec<f64>,
    has_ties: bool,
    /// `sum(t^3 - t)` over tie groups.
    tie_term: f64,
}

fn midranks(xs: &[f64], ys: &[f64]) -> Ranked {
    let all: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.sort_by(|&a, &b| all[a].total_cmp(&all[b]));
    let mut ranks = vec![0.0; all.len()];
    let mut tie_term = 0.0;
    let mut has_ties = false;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && all[order[j]] == all[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        let t = (j - i) as f64;
        if j - i > 1 {
            has_ties = true;
            tie_term += t * t * t - t;
        }
        i = j;
    }
    Ranked { ranks, has_ties, tie_term }
}

/// `P(U >= u)` under the null, by counting rank arrangements.
fn exact_upper_tail(m: usize, n: usize, u: usize) -> f64 {
    let counts = u_counts(m, n);
    let total: f64 = counts.iter().sum();
    let tail: f64 = counts.iter().skip(u).sum();
    (tail / total).clamp(0.0, 1.0)
}

/// Number of arrangements giving each U value for sample sizes `m`, `n`.
/// Built with the recurrence `f(m, n, u) = f(m-1, n, u-n) + f(m, n-1, u)`.
fn u_counts(m: usize, n: usize) -> Vec<f64> {
    // table[j][k] holds the distribution for sizes (i, j) with i the outer loop
    let mut prev: Vec<Vec<f64>> = (0..=n).map(|_| vec![1.0]).collect();
    for i in 1..=m {
        let mut cur: Vec<Vec<f64>> = vec![vec![1.0]];
        for j in 1..=n {
            let len = i * j + 1;
            let mut dist = vec![0.0; len];
            for (u, c) in prev[j].iter().enumerate() {
                dist[u + j] += c;
            }
            for (u, c) in cur[j - 1].iter().enumerate() {
                dist[u] += c;
            }
            cur.push(dist);
        }
        prev = cur;
    }
    prev.swap_remove(n)
}

fn normal_upper_tail(m: usize, n: usize, u: f64, tie_term: f64) -> f64 {
    let (mf, nf) = (m as f64, n as f64);
    let total = mf + nf;
    let mean = mf * nf / 2.0;
    let var = mf * nf / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)));
    if var <= 1e-12 * mean {
        return 1.0;
    }
    let z = (u - mean - 0.5) / var.sqrt();
    let normal = Normal::standard();
    normal.sf(z).clamp(0.0, 1.0)
}

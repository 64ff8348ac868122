use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::schedule::{check_time, NoiseSchedule};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Multivariate normal with a symmetric positive-definite covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawComponent", into = "RawComponent")]
pub struct GaussianComponent {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawComponent {
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

impl TryFrom<RawComponent> for GaussianComponent {
    type Error = Error;
    fn try_from(raw: RawComponent) -> Result<Self> {
        let d = raw.mean.len();
        if raw.covariance.len() != d || raw.covariance.iter().any(|r| r.len() != d) {
            return Err(Error::validation(format!(
                "covariance must be {d}x{d} to match the mean"
            )));
        }
        let cov = DMatrix::from_fn(d, d, |i, j| raw.covariance[i][j]);
        GaussianComponent::new(DVector::from_vec(raw.mean), cov)
    }
}

impl From<GaussianComponent> for RawComponent {
    fn from(c: GaussianComponent) -> Self {
        let d = c.mean.len();
        RawComponent {
            mean: c.mean.iter().copied().collect(),
            covariance: (0..d)
                .map(|i| (0..d).map(|j| c.covariance[(i, j)]).collect())
                .collect(),
        }
    }
}

impl GaussianComponent {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::validation("component has zero dimension"));
        }
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::Dimension { expected: d, found: covariance.nrows() });
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation("component has non-finite entries"));
        }
        for i in 0..d {
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > 1e-12 {
                    return Err(Error::validation("covariance is not symmetric"));
                }
            }
        }
        let eig = covariance.clone().symmetric_eigenvalues();
        if eig.iter().any(|&l| l <= 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(GaussianComponent { mean, covariance })
    }

    /// Isotropic component `N(mean, variance * I)`.
    pub fn isotropic(mean: &[f64], variance: f64) -> Result<Self> {
        let d = mean.len();
        GaussianComponent::new(
            DVector::from_column_slice(mean),
            DMatrix::identity(d, d) * variance,
        )
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub(crate) fn factor(&self) -> Result<Factored> {
        Factored::new(self)
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.factor()?.log_density(x))
    }

    /// Gradient of the log density: `-Sigma^{-1} (x - mu)`.
    pub fn score(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dimension(), x)?;
        Ok(self.factor()?.score(x))
    }
}

/// A component with its Cholesky factor and log-determinant cached.
pub(crate) struct Factored {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl Factored {
    fn new(c: &GaussianComponent) -> Result<Self> {
        let chol = Cholesky::new(c.covariance.clone()).ok_or(Error::NotPositiveDefinite)?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Factored { mean: c.mean.clone(), chol, log_det })
    }

    pub(crate) fn log_density(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        let solved = self.chol.solve(&diff);
        let quad = diff.dot(&solved);
        -0.5 * (self.mean.len() as f64 * LN_2PI + self.log_det + quad)
    }

    pub(crate) fn score(&self, x: &DVector<f64>) -> DVector<f64> {
        let diff = x - &self.mean;
        -self.chol.solve(&diff)
    }
}

pub(crate) fn check_dim(expected: usize, x: &DVector<f64>) -> Result<()> {
    if x.len() == expected {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found: x.len() })
    }
}

/// Exact forward-noised marginal: mean `alpha_t mu`, covariance
/// `alpha_t^2 Sigma + sigma_t^2 I`.
pub fn marginal_component(
    comp: &GaussianComponent,
    sched: &NoiseSchedule,
    t: f64,
) -> Result<GaussianComponent> {
    check_time(t)?;
    let a = sched.alpha(t);
    let s2 = sched.sigma_sq(t);
    let d = comp.dimension();
    let mean = &comp.mean * a;
    let mut cov = &comp.covariance * (a * a) + DMatrix::identity(d, d) * s2;
    // keep exact symmetry after floating-point scaling
    cov = (&cov + cov.transpose()) * 0.5;
    GaussianComponent::new(mean, cov)
}

/// Score of the noised marginal of `comp` at time `t`.
pub fn component_score(
    x: &DVector<f64>,
    comp: &GaussianComponent,
    sched: &NoiseSchedule,
    t: f64,
) -> Result<DVector<f64>> {
    marginal_component(comp, sched, t)?.score(x)
}

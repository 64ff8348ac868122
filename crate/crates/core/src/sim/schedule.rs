use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance-preserving schedule with a linear noise rate
/// `beta(t) = beta_min + t * (beta_max - beta_min)` on `t in [0, 1]`.
///
/// The signal coefficient is `alpha_t = exp(-1/2 * int_0^t beta)` and the
/// noise scale is `sigma_t = sqrt(1 - alpha_t^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule { beta_min: 0.1, beta_max: 20.0 }
    }
}

impl NoiseSchedule {
    pub fn new(beta_min: f64, beta_max: f64) -> Result<Self> {
        if !(beta_min > 0.0 && beta_max > 0.0 && beta_min.is_finite() && beta_max.is_finite()) {
            return Err(Error::validation("schedule betas must be positive and finite"));
        }
        if beta_max < beta_min {
            return Err(Error::validation("beta_max must be >= beta_min"));
        }
        Ok(NoiseSchedule { beta_min, beta_max })
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + t * (self.beta_max - self.beta_min)
    }

    fn integrated_beta(&self, t: f64) -> f64 {
        self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t
    }

    pub fn alpha(&self, t: f64) -> f64 {
        (-0.5 * self.integrated_beta(t)).exp()
    }

    /// Noise variance `sigma_t^2`, computed without cancellation near `t = 0`.
    pub fn sigma_sq(&self, t: f64) -> f64 {
        -(-self.integrated_beta(t)).exp_m1()
    }

    pub fn sigma(&self, t: f64) -> f64 {
        self.sigma_sq(t).sqrt()
    }

    /// Time at which `alpha_t` equals `alpha` (`0 < alpha <= 1`).
    pub fn time_for_alpha(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::validation(format!("alpha {alpha} outside (0, 1]")));
        }
        // solve beta_min t + (beta_max - beta_min)/2 t^2 = -2 ln alpha
        let target = -2.0 * alpha.ln();
        let a = 0.5 * (self.beta_max - self.beta_min);
        let b = self.beta_min;
        let t = if a == 0.0 {
            target / b
        } else {
            (-b + (b * b + 4.0 * a * target).sqrt()) / (2.0 * a)
        };
        if t > 1.0 {
            return Err(Error::TimeOutOfRange(t));
        }
        Ok(t)
    }
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::TimeOutOfRange(t))
    }
}

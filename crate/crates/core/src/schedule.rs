//! Discrete variance-preserving noise schedule.
//!
//! The forward process diffuses a clean state `x0` to `x_t = alpha_t * x0 +
//! sigma_t * eps` with `alpha_t^2 + sigma_t^2 = 1`. Coefficients follow the
//! standard discrete construction `abar_t = prod_{i<=t}(1 - beta_i)`,
//! `alpha_t = sqrt(abar_t)`, `sigma_t = sqrt(1 - abar_t)`, with the product
//! accumulated in the log domain so large `T` does not underflow.

use ndarray::Array1;

use crate::{Error, Result};

/// Immutable noise schedule over timesteps `t = 1..=t_max`.
///
/// Safe to share across threads; all queries are read-only.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds the linear-beta schedule: `beta_i` interpolates from `beta_min`
    /// at `i = 1` to `beta_max` at `i = T`.
    pub fn linear(beta_min: f64, beta_max: f64, t_max: usize) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::InvalidParameter("schedule needs T >= 1".into()));
        }
        if !(beta_min > 0.0 && beta_max < 1.0 && beta_min <= beta_max) {
            return Err(Error::InvalidParameter(format!(
                "betas must satisfy 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
            )));
        }
        let denom = (t_max - 1).max(1) as f64;
        let beta: Vec<f64> = (1..=t_max)
            .map(|i| beta_min + ((i - 1) as f64 / denom) * (beta_max - beta_min))
            .collect();

        let mut alpha = Vec::with_capacity(t_max);
        let mut sigma = Vec::with_capacity(t_max);
        let mut log_abar = 0.0_f64;
        for &b in &beta {
            log_abar += (-b).ln_1p(); // ln(1 - b)
            alpha.push((0.5 * log_abar).exp());
            // 1 - abar via expm1 keeps precision when abar is close to 1
            sigma.push((-log_abar.exp_m1()).sqrt());
        }
        Self::from_parts(beta, alpha, sigma)
    }

    /// Builds a schedule from explicit coefficient arrays.
    ///
    /// Only basic range checks are performed; this is intended for custom or
    /// synthetic schedules. The variance-preserving identity is guaranteed by
    /// [`NoiseSchedule::linear`], not by this constructor.
    pub fn from_parts(beta: Vec<f64>, alpha: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let t_max = beta.len();
        if t_max == 0 {
            return Err(Error::InvalidParameter("schedule needs T >= 1".into()));
        }
        if alpha.len() != t_max || sigma.len() != t_max {
            return Err(Error::DimensionMismatch(format!(
                "schedule arrays must share one length, got beta={}, alpha={}, sigma={}",
                beta.len(),
                alpha.len(),
                sigma.len()
            )));
        }
        for t in 0..t_max {
            if !(beta[t] > 0.0 && beta[t] < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "beta[{}] = {} outside (0,1)",
                    t + 1,
                    beta[t]
                )));
            }
            if !(alpha[t] > 0.0 && alpha[t] <= 1.0) || !(0.0..=1.0).contains(&sigma[t]) {
                return Err(Error::InvalidParameter(format!(
                    "coefficients at t={} outside range: alpha={}, sigma={}",
                    t + 1,
                    alpha[t],
                    sigma[t]
                )));
            }
        }
        Ok(Self { beta, alpha, sigma })
    }

    /// Number of timesteps `T`.
    pub fn t_max(&self) -> usize {
        self.beta.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_max() {
            Err(Error::TimestepOutOfRange {
                t,
                t_max: self.t_max(),
            })
        } else {
            Ok(())
        }
    }

    /// Per-step noise rate `beta_t`, `t` is 1-indexed. Panics when out of range.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// Signal coefficient `alpha_t`, `t` is 1-indexed. Panics when out of range.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Noise coefficient `sigma_t`, `t` is 1-indexed. Panics when out of range.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    /// Signal-to-noise ratio `alpha_t / sigma_t`; strictly decreasing in `t`.
    pub fn snr(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alpha(t) / self.sigma(t))
    }

    /// Forward diffusion: `alpha_t * x0 + sigma_t * eps`.
    pub fn diffuse(&self, x0: &Array1<f64>, t: usize, eps: &Array1<f64>) -> Result<Array1<f64>> {
        self.check_t(t)?;
        if x0.len() != eps.len() {
            return Err(Error::DimensionMismatch(format!(
                "diffuse: x0 has {} entries, eps has {}",
                x0.len(),
                eps.len()
            )));
        }
        Ok(self.alpha(t) * x0 + self.sigma(t) * eps)
    }

    /// Score of the diffused variational marginal `N(alpha_t * mu,
    /// (alpha_t^2 sigma_q^2 + sigma_t^2) I)` evaluated at `x_t`:
    /// `-(x_t - alpha_t mu) / (alpha_t^2 sigma_q^2 + sigma_t^2)`.
    pub fn variational_marginal_score(
        &self,
        mu: &Array1<f64>,
        sigma_q: f64,
        x_t: &Array1<f64>,
        t: usize,
    ) -> Result<Array1<f64>> {
        self.check_t(t)?;
        if mu.len() != x_t.len() {
            return Err(Error::DimensionMismatch(format!(
                "score: mu has {} entries, x_t has {}",
                mu.len(),
                x_t.len()
            )));
        }
        if sigma_q < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma_q must be >= 0, got {sigma_q}"
            )));
        }
        let a = self.alpha(t);
        let var = a * a * sigma_q * sigma_q + self.sigma(t) * self.sigma(t);
        Ok((a * mu - x_t) / var)
    }
}

//! Score priors: map a noisy state `(x_t, t)` to a noise prediction
//! `eps(x_t; t) = -sigma_t * grad log p(x_t)`.
//!
//! The Gaussian and Gaussian-mixture priors diffuse in closed form, so the
//! prediction is exact rather than learned. Mixture responsibilities are
//! evaluated in log space for stability with well-separated components.

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

/// Anything that predicts the injected noise from a diffused state.
///
/// Implementations must be pure: the same `(x_t, t)` always yields the same
/// prediction, with the same dimension as `x_t`. Priors are immutable after
/// construction and safe to share across concurrent runs.
pub trait ScorePrior: Send + Sync {
    fn dim(&self) -> usize;
    fn predict_eps(&self, x_t: &Array1<f64>, t: usize, schedule: &NoiseSchedule) -> Array1<f64>;
}

/// Isotropic Gaussian prior `N(mean, variance * I)`.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mean: Array1<f64>,
    variance: f64,
}

impl GaussianPrior {
    pub fn new(mean: Array1<f64>, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "prior variance must be positive, got {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }

    /// Standard normal prior in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            variance: 1.0,
        }
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Draws a clean sample `x0` from the prior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64> {
        let std = self.variance.sqrt();
        &self.mean + std * randn(self.dim(), rng)
    }
}

impl ScorePrior for GaussianPrior {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn predict_eps(&self, x_t: &Array1<f64>, t: usize, schedule: &NoiseSchedule) -> Array1<f64> {
        assert_eq!(x_t.len(), self.dim(), "predict_eps dimension mismatch");
        let a = schedule.alpha(t);
        let sg = schedule.sigma(t);
        // diffused marginal N(a * mean, (a^2 tau^2 + sigma^2) I)
        let var = a * a * self.variance + sg * sg;
        sg / var * (x_t - &(a * &self.mean))
    }
}

/// Mixture of isotropic Gaussians with positive weights summing to one.
#[derive(Debug, Clone)]
pub struct GaussianMixturePrior {
    weights: Vec<f64>,
    means: Vec<Array1<f64>>,
    variances: Vec<f64>,
}

impl GaussianMixturePrior {
    pub fn new(weights: Vec<f64>, means: Vec<Array1<f64>>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidParameter(
                "mixture needs at least one component".into(),
            ));
        }
        if means.len() != k || variances.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "mixture arrays disagree: {} weights, {} means, {} variances",
                k,
                means.len(),
                variances.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidParameter("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "weights must sum to 1 within 1e-12, got {total}"
            )));
        }
        if variances.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidParameter(
                "component variances must be positive".into(),
            ));
        }
        let dim = means[0].len();
        if means.iter().any(|m| m.len() != dim) {
            return Err(Error::DimensionMismatch(
                "mixture means must share one dimension".into(),
            ));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Array1<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Draws a clean sample: pick a component by weight, then sample it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut idx = self.weights.len() - 1;
        for (k, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                idx = k;
                break;
            }
        }
        &self.means[idx] + self.variances[idx].sqrt() * randn(self.dim(), rng)
    }
}

impl ScorePrior for GaussianMixturePrior {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn predict_eps(&self, x_t: &Array1<f64>, t: usize, schedule: &NoiseSchedule) -> Array1<f64> {
        assert_eq!(x_t.len(), self.dim(), "predict_eps dimension mismatch");
        let a = schedule.alpha(t);
        let sg = schedule.sigma(t);
        let n = self.dim() as f64;

        // log responsibilities of the diffused mixture at x_t
        let k = self.n_components();
        let mut log_terms = Vec::with_capacity(k);
        let mut diffs: Vec<Array1<f64>> = Vec::with_capacity(k);
        let mut vars = Vec::with_capacity(k);
        for c in 0..k {
            let var = a * a * self.variances[c] + sg * sg;
            let d = x_t - &(a * &self.means[c]);
            let sq = d.dot(&d);
            log_terms.push(self.weights[c].ln() - 0.5 * n * var.ln() - sq / (2.0 * var));
            diffs.push(d);
            vars.push(var);
        }
        let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = log_terms.iter().map(|&l| (l - max).exp()).sum();

        // score = sum_k resp_k * (-(x - a m_k) / var_k); eps = -sigma * score
        let mut eps = Array1::zeros(self.dim());
        for c in 0..k {
            let resp = (log_terms[c] - max).exp() / denom;
            eps = eps + (resp * sg / vars[c]) * &diffs[c];
        }
        eps
    }
}

/// MMSE denoising estimate of the clean state: `(x_t - sigma_t * eps) / alpha_t`.
pub fn mmse_estimate(
    x_t: &Array1<f64>,
    t: usize,
    eps_pred: &Array1<f64>,
    schedule: &NoiseSchedule,
) -> Result<Array1<f64>> {
    if x_t.len() != eps_pred.len() {
        return Err(Error::DimensionMismatch(format!(
            "mmse_estimate: x_t has {} entries, eps_pred has {}",
            x_t.len(),
            eps_pred.len()
        )));
    }
    let a = schedule.alpha(t);
    if a == 0.0 {
        return Err(Error::DegenerateAlpha { t });
    }
    Ok((x_t - &(schedule.sigma(t) * eps_pred)) / a)
}

/// Vector of `n` independent standard normal draws.
pub fn randn<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array1<f64> {
    Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn paper_schedule() -> NoiseSchedule {
        NoiseSchedule::linear(1e-4, 0.02, 1000).unwrap()
    }

    /// Log density of the diffused mixture, written independently of
    /// `predict_eps` so finite differences of it are a genuine oracle.
    fn gmm_diffused_log_density(
        p: &GaussianMixturePrior,
        s: &NoiseSchedule,
        t: usize,
        x: &Array1<f64>,
    ) -> f64 {
        let a = s.alpha(t);
        let sg = s.sigma(t);
        let n = x.len() as f64;
        let mut best = f64::NEG_INFINITY;
        let mut terms = Vec::new();
        for c in 0..p.n_components() {
            let var = a * a * p.variances()[c] + sg * sg;
            let d = x - &(a * &p.means()[c]);
            let l = p.weights()[c].ln()
                - 0.5 * n * (2.0 * std::f64::consts::PI * var).ln()
                - d.dot(&d) / (2.0 * var);
            best = best.max(l);
            terms.push(l);
        }
        best + terms.iter().map(|&l| (l - best).exp()).sum::<f64>().ln()
    }

    #[test]
    fn standard_normal_prior_vp_identity() {
        // mean 0, tau = 1: denominator is alpha^2 + sigma^2 = 1, eps = sigma * x
        let s = paper_schedule();
        let p = GaussianPrior::standard(3);
        let x = array![0.7, -1.1, 2.0];
        for &t in &[1usize, 333, 1000] {
            let eps = p.predict_eps(&x, t, &s);
            for i in 0..3 {
                assert!((eps[i] - s.sigma(t) * x[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_eps_closed_form_06_08() {
        // single-step schedule with alpha ~= 0.6, sigma ~= 0.8
        let s = NoiseSchedule::linear(0.64, 0.64, 1).unwrap();
        let p = GaussianPrior::standard(1);
        let eps = p.predict_eps(&array![1.0], 1, &s);
        assert!((eps[0] - 0.8).abs() < 1e-12);

        // cross-check against finite differences of the Gaussian log density
        let var = s.alpha(1).powi(2) + s.sigma(1).powi(2);
        let h = 1e-6;
        let logp = |x: f64| -x * x / (2.0 * var);
        let fd_score = (logp(1.0 + h) - logp(1.0 - h)) / (2.0 * h);
        assert!((eps[0] - (-s.sigma(1) * fd_score)).abs() < 1e-8);
    }

    #[test]
    fn gaussian_eps_vanishes_at_mode() {
        let s = paper_schedule();
        let mean = array![0.5, -0.25];
        let p = GaussianPrior::new(mean.clone(), 2.0).unwrap();
        let t = 600;
        let eps = p.predict_eps(&(s.alpha(t) * &mean), t, &s);
        assert!(eps.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn gaussian_prior_rejects_bad_variance() {
        assert!(GaussianPrior::new(array![0.0], 0.0).is_err());
        assert!(GaussianPrior::new(array![0.0], -1.0).is_err());
    }

    #[test]
    fn gmm_single_component_equals_gaussian() {
        let s = paper_schedule();
        let mean = array![0.3, -0.8];
        let g = GaussianPrior::new(mean.clone(), 1.7).unwrap();
        let m = GaussianMixturePrior::new(vec![1.0], vec![mean], vec![1.7]).unwrap();
        let x = array![1.2, 0.4];
        for &t in &[5usize, 500, 1000] {
            let a = g.predict_eps(&x, t, &s);
            let b = m.predict_eps(&x, t, &s);
            for i in 0..2 {
                assert!((a[i] - b[i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn gmm_symmetric_mixture_zero_at_origin() {
        let s = paper_schedule();
        let m = array![1.5, -2.0];
        let p =
            GaussianMixturePrior::new(vec![0.5, 0.5], vec![m.clone(), -m.clone()], vec![0.4, 0.4])
                .unwrap();
        let eps = p.predict_eps(&Array1::zeros(2), 250, &s);
        assert!(eps.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn gmm_score_matches_finite_difference() {
        let s = paper_schedule();
        let p = GaussianMixturePrior::new(
            vec![0.5, 0.3, 0.2],
            vec![array![1.0, -0.5], array![-1.2, 0.8], array![0.2, 2.0]],
            vec![0.5, 0.8, 0.3],
        )
        .unwrap();
        let h = 1e-5;
        for &(t, x0, x1) in &[
            (40usize, 0.3, -0.2),
            (400, -0.9, 1.1),
            (990, 0.5, 0.5),
            (7, 1.4, -0.4),
        ] {
            let x = array![x0, x1];
            let eps = p.predict_eps(&x, t, &s);
            // score = -eps / sigma
            for i in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (gmm_diffused_log_density(&p, &s, t, &xp)
                    - gmm_diffused_log_density(&p, &s, t, &xm))
                    / (2.0 * h);
                let got = -eps[i] / s.sigma(t);
                let rel = (fd - got).abs() / got.abs().max(1e-9);
                assert!(rel < 1e-6, "t={t}, coord {i}: fd={fd}, analytic={got}");
            }
        }
    }

    #[test]
    fn gmm_extreme_separation_stays_finite() {
        let s = paper_schedule();
        let p = GaussianMixturePrior::new(
            vec![0.5, 0.5],
            vec![array![400.0], array![-400.0]],
            vec![1e-4, 1e-4],
        )
        .unwrap();
        for &x in &[-500.0, -1.0, 0.0, 3.0, 450.0] {
            let eps = p.predict_eps(&array![x], 3, &s);
            assert!(eps[0].is_finite(), "non-finite eps at x={x}");
        }
    }

    #[test]
    fn gmm_construction_rejections() {
        assert!(GaussianMixturePrior::new(vec![], vec![], vec![]).is_err());
        assert!(GaussianMixturePrior::new(
            vec![0.6, 0.5],
            vec![array![0.], array![1.]],
            vec![1., 1.]
        )
        .is_err());
        assert!(GaussianMixturePrior::new(vec![1.0], vec![array![0.]], vec![0.0]).is_err());
        assert!(GaussianMixturePrior::new(
            vec![0.5, 0.5],
            vec![array![0.0], array![0.0, 1.0]],
            vec![1.0, 1.0]
        )
        .is_err());
    }

    #[test]
    fn mmse_inverts_forward_process_with_exact_noise() {
        let s = paper_schedule();
        let x0 = array![0.2, -1.5, 0.9];
        let eps = array![0.6, 0.1, -1.2];
        let t = 777;
        let x_t = s.diffuse(&x0, t, &eps).unwrap();
        let rec = mmse_estimate(&x_t, t, &eps, &s).unwrap();
        for i in 0..3 {
            assert!((rec[i] - x0[i]).abs() < 1e-12);
        }
        // eps_pred = 0 gives x_t / alpha
        let rec0 = mmse_estimate(&x_t, t, &Array1::zeros(3), &s).unwrap();
        for i in 0..3 {
            assert!((rec0[i] - x_t[i] / s.alpha(t)).abs() < 1e-14);
        }
    }

    #[test]
    fn residual_identity_for_arbitrary_eps_pred() {
        // mu - mmse(diffuse(mu, t, eps), t, eps_pred) = (sigma/alpha)(eps_pred - eps)
        let s = paper_schedule();
        let mu = array![0.4, -0.7, 1.8, 0.05];
        let eps = array![-0.3, 0.9, 0.2, -1.6];
        for &t in &[3usize, 320, 915] {
            for &scale in &[0.0, 0.5, -2.0] {
                let eps_pred = scale * &eps + 0.1;
                let x_t = s.diffuse(&mu, t, &eps).unwrap();
                let est = mmse_estimate(&x_t, t, &eps_pred, &s).unwrap();
                let ratio = s.sigma(t) / s.alpha(t);
                for i in 0..4 {
                    let lhs = mu[i] - est[i];
                    let rhs = ratio * (eps_pred[i] - eps[i]);
                    assert!(
                        (lhs - rhs).abs() < 1e-10,
                        "t={t}, scale={scale}, i={i}: {lhs} vs {rhs}"
                    );
                }
            }
        }
    }
}

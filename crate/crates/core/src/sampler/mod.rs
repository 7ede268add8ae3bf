//! The RED-diff variational sampler.
//!
//! Sampling is stochastic optimization of the per-timestep loss
//!
//! ```text
//! loss = ||y - f(mu)||^2 + lambda_t * sg[eps(x_t; t) - eps]^T mu
//! ```
//!
//! where `x_t = alpha_t mu + sigma_t eps` with fresh `eps` each step and the
//! denoising residual is treated as a constant (stopped gradient), so
//!
//! ```text
//! grad_mu = 2 J_f(mu)^T (f(mu) - y) + lambda_t (eps(x_t; t) - eps).
//! ```
//!
//! The per-timestep weight defaults to `lambda_t = lambda / SNR_t`, which
//! makes the regularizer act on the signal-domain residual `mu_hat_t - mu`.

mod dps;
mod optim;
mod plan;
mod trace;

pub use dps::dps_baseline_sample;
pub use optim::{OptimizerConfig, OptimizerKind};
pub use plan::{descending_timesteps, spaced_timestep, PlanKind, TimestepPlan};
pub use trace::{RunTrace, TraceRecord};

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::operators::Measurement;
use crate::priors::{randn, ScorePrior};
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

use optim::OptimizerState;

/// Observation noise floor used where `sigma_v` enters weighting; noiseless
/// problems are treated as having this small noise level.
pub const SIGMA_V_FLOOR: f64 = 1e-3;

/// Per-timestep regularization weight family.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightKind {
    /// `lambda_t = lambda` for all `t`.
    Constant,
    /// `lambda_t = lambda / SNR_t^p`; `p = 1` is the signal-domain default,
    /// `p = 0.5` the square-root decay alternative.
    InvSnrPower(f64),
    /// `lambda_t = 2 T sigma_v^2 (alpha_t / sigma_t) * omega_prime[t]` for a
    /// user-supplied tabulation of the weight derivative, `omega_prime[0]`
    /// belonging to `t = 1`.
    MaxLikelihood(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSchedule {
    kind: WeightKind,
    lambda: f64,
}

impl WeightSchedule {
    pub fn new(kind: WeightKind, lambda: f64) -> Result<Self> {
        // lambda = 0 is allowed: it disables the regularizer entirely
        if !(lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be nonnegative, got {lambda}"
            )));
        }
        match &kind {
            WeightKind::InvSnrPower(p) if !(*p >= 0.0) => {
                return Err(Error::InvalidParameter(format!(
                    "inv_snr_power exponent must be >= 0, got {p}"
                )));
            }
            WeightKind::MaxLikelihood(omega_prime) => {
                if omega_prime.is_empty() {
                    return Err(Error::InvalidParameter(
                        "max_likelihood needs a nonempty omega_prime table".into(),
                    ));
                }
                // omega(0) = 0 with nonnegative increments keeps the
                // cumulative weight's first entry the smallest
                if omega_prime.iter().any(|&w| !(w >= 0.0)) {
                    return Err(Error::InvalidParameter(
                        "omega_prime entries must be nonnegative".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(Self { kind, lambda })
    }

    /// The signal-domain default: `lambda / SNR_t`.
    pub fn inv_snr(lambda: f64) -> Self {
        Self::new(WeightKind::InvSnrPower(1.0), lambda).expect("valid")
    }

    pub fn kind(&self) -> &WeightKind {
        &self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Weight for timestep `t`; `sigma_v` only enters the max-likelihood family.
    pub fn lambda_at(&self, s: &NoiseSchedule, t: usize, sigma_v: f64) -> f64 {
        match &self.kind {
            WeightKind::Constant => self.lambda,
            WeightKind::InvSnrPower(p) => {
                let snr = s.alpha(t) / s.sigma(t);
                self.lambda / snr.powf(*p)
            }
            WeightKind::MaxLikelihood(omega_prime) => {
                let t_max = s.t_max() as f64;
                2.0 * t_max * sigma_v * sigma_v * (s.alpha(t) / s.sigma(t)) * omega_prime[t - 1]
            }
        }
    }
}

/// The variational distribution `q = N(mu, sigma_q^2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub mu: Array1<f64>,
    pub sigma_q: f64,
}

impl VariationalState {
    pub fn point(mu: Array1<f64>) -> Self {
        Self { mu, sigma_q: 0.0 }
    }
}

/// Loss, gradient, and trace record for one timestep evaluation.
pub struct StepEval {
    pub loss: f64,
    pub grad_mu: Array1<f64>,
    pub record: TraceRecord,
}

/// Evaluates the stopped-gradient RED-diff loss at a single timestep
/// (point-mass variational distribution; dispersion has its own path in
/// [`sample_with_dispersion`]).
pub fn red_diff_step_loss(
    state: &VariationalState,
    m: &Measurement,
    prior: &dyn ScorePrior,
    s: &NoiseSchedule,
    w: &WeightSchedule,
    t: usize,
    eps: &Array1<f64>,
) -> Result<StepEval> {
    let mu = &state.mu;
    let op = m.operator();
    if mu.len() != op.in_dim() || mu.len() != prior.dim() {
        return Err(Error::DimensionMismatch(format!(
            "state has {} entries, operator expects {}, prior expects {}",
            mu.len(),
            op.in_dim(),
            prior.dim()
        )));
    }
    let alpha = s.alpha(t);
    if alpha == 0.0 {
        return Err(Error::DegenerateAlpha { t });
    }
    let x_t = s.diffuse(mu, t, eps)?;
    let eps_pred = prior.predict_eps(&x_t, t, s);
    // stopped gradient: the residual is a constant w.r.t. mu
    let residual = &eps_pred - eps;

    let fx = op.apply(mu);
    let diff = &fx - m.y();
    let recon = diff.dot(&diff);
    let lambda_t = w.lambda_at(s, t, op.sigma_v().max(SIGMA_V_FLOOR));
    let reg_inner = residual.dot(mu);
    let loss = recon + lambda_t * reg_inner;
    let grad_mu = 2.0 * op.vjp(mu, &diff) + lambda_t * &residual;

    let eps_residual_norm = residual.dot(&residual).sqrt();
    // exact signal-domain counterpart of the noise residual
    let signal_residual_norm = s.sigma(t) / alpha * eps_residual_norm;

    Ok(StepEval {
        loss,
        grad_mu,
        record: TraceRecord {
            step: 0,
            t,
            loss,
            recon,
            reg_inner,
            eps_residual_norm,
            signal_residual_norm,
        },
    })
}

/// Final state and trace of a sampling run.
#[derive(Debug)]
pub struct SamplerOutput {
    pub mu: Array1<f64>,
    pub trace: RunTrace,
}

/// Output of the dispersion-enabled sampler.
#[derive(Debug)]
pub struct DispersionOutput {
    pub mu: Array1<f64>,
    pub sigma_q: f64,
    pub trace: RunTrace,
}

fn validate_run(
    m: &Measurement,
    prior: &dyn ScorePrior,
    s: &NoiseSchedule,
    w: &WeightSchedule,
    plan: &TimestepPlan,
    opt: &OptimizerConfig,
) -> Result<()> {
    opt.validate()?;
    if plan.steps != opt.steps {
        return Err(Error::InvalidParameter(format!(
            "plan covers {} steps but optimizer runs {}",
            plan.steps, opt.steps
        )));
    }
    if prior.dim() != m.operator().in_dim() {
        return Err(Error::DimensionMismatch(format!(
            "prior dimension {} vs operator input {}",
            prior.dim(),
            m.operator().in_dim()
        )));
    }
    if let WeightKind::MaxLikelihood(omega_prime) = w.kind() {
        if omega_prime.len() != s.t_max() {
            return Err(Error::DimensionMismatch(format!(
                "omega_prime table has {} entries, schedule has {}",
                omega_prime.len(),
                s.t_max()
            )));
        }
    }
    Ok(())
}

fn ensure_finite(value: f64, what: &'static str, step: usize, t: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what, step, t })
    }
}

/// Runs the RED-diff sampler: starting from the operator's initial estimate,
/// each step draws a timestep per the plan and fresh noise from the seeded
/// PRNG, evaluates [`red_diff_step_loss`], and applies one optimizer update.
/// Minibatch plans average the gradient over the batch. Deterministic given
/// the seed.
pub fn sample(
    m: &Measurement,
    prior: &dyn ScorePrior,
    s: &NoiseSchedule,
    w: &WeightSchedule,
    plan: &TimestepPlan,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<SamplerOutput> {
    validate_run(m, prior, s, w, plan, opt)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut mu = m.operator().initial_estimate(m.y());
    if mu.len() != m.operator().in_dim() {
        return Err(Error::DimensionMismatch(
            "initial estimate has wrong dimension".into(),
        ));
    }
    let dim = mu.len();
    let mut optimizer = OptimizerState::new(opt, dim);
    let mut trace = RunTrace::default();

    for step in 1..=opt.steps {
        let timesteps = plan.draw(step - 1, s.t_max(), &mut rng);
        let batch = timesteps.len() as f64;
        let mut grad = Array1::zeros(dim);
        let mut loss_mean = 0.0;
        let mut reg_mean = 0.0;
        let mut record = None;
        let state = VariationalState::point(mu.clone());
        for (b, &t) in timesteps.iter().enumerate() {
            let eps = randn(dim, &mut rng);
            let eval = red_diff_step_loss(&state, m, prior, s, w, t, &eps)?;
            ensure_finite(eval.loss, "loss", step, t)?;
            grad += &eval.grad_mu;
            loss_mean += eval.loss / batch;
            reg_mean += eval.record.reg_inner / batch;
            if b == 0 {
                record = Some(eval.record);
            }
        }
        grad.mapv_inplace(|g| g / batch);
        let mut record = record.expect("batch is nonempty");
        ensure_finite(grad.sum(), "gradient", step, record.t)?;
        record.step = step;
        record.loss = loss_mean;
        record.reg_inner = reg_mean;
        trace.records.push(record);
        optimizer.step(opt.lr, &mut mu, &grad);
    }
    Ok(SamplerOutput { mu, trace })
}

/// RED-diff with a Gaussian dispersion parameter `sigma_q` optimized jointly
/// with the mean.
///
/// The diffused state becomes `x_t = alpha_t mu + eta_t sigma_t eps` with
/// `eta_t = sqrt(1 + sigma_q^2 SNR_t^2)`. The mean gradient uses the
/// `lambda_t * eps_pred` estimator (the zero-mean noise term drops), and the
/// dispersion gradient is
///
/// ```text
/// grad_sigma = sigma_q * lambda_t * 2 / eta_t * SNR_t * eps^T (eps_pred - eps / eta_t)
/// ```
///
/// `sigma_q` is clamped to be nonnegative after each update.
#[allow(clippy::too_many_arguments)]
pub fn sample_with_dispersion(
    m: &Measurement,
    prior: &dyn ScorePrior,
    s: &NoiseSchedule,
    w: &WeightSchedule,
    plan: &TimestepPlan,
    opt: &OptimizerConfig,
    seed: u64,
    sigma_init: f64,
) -> Result<DispersionOutput> {
    validate_run(m, prior, s, w, plan, opt)?;
    if !(sigma_init >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma_init must be >= 0, got {sigma_init}"
        )));
    }
    let op = m.operator();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut mu = op.initial_estimate(m.y());
    let dim = mu.len();
    let mut sigma_q = sigma_init;
    let mut mu_opt = OptimizerState::new(opt, dim);
    let mut sigma_opt = OptimizerState::new(opt, 1);
    let mut trace = RunTrace::default();
    let sigma_v_eff = op.sigma_v().max(SIGMA_V_FLOOR);

    for step in 1..=opt.steps {
        let timesteps = plan.draw(step - 1, s.t_max(), &mut rng);
        let batch = timesteps.len() as f64;
        let mut grad_mu = Array1::zeros(dim);
        let mut grad_sigma = 0.0;
        let mut loss_mean = 0.0;
        let mut reg_mean = 0.0;
        let mut record = None;

        let fx = op.apply(&mu);
        let diff = &fx - m.y();
        let recon = diff.dot(&diff);
        let recon_grad = 2.0 * op.vjp(&mu, &diff);

        for (b, &t) in timesteps.iter().enumerate() {
            let alpha = s.alpha(t);
            if alpha == 0.0 {
                return Err(Error::DegenerateAlpha { t });
            }
            let sg_t = s.sigma(t);
            let snr = alpha / sg_t;
            let eta = (1.0 + sigma_q * sigma_q * snr * snr).sqrt();
            let eps = randn(dim, &mut rng);
            let x_t = alpha * &mu + eta * sg_t * &eps;
            let eps_pred = prior.predict_eps(&x_t, t, s);
            let lambda_t = w.lambda_at(s, t, sigma_v_eff);

            // mean gradient drops the zero-mean eps term
            grad_mu = grad_mu + lambda_t * &eps_pred;
            grad_sigma +=
                sigma_q * lambda_t * 2.0 * snr / eta * eps.dot(&(&eps_pred - &(&eps / eta)));

            let residual = &eps_pred - &eps;
            let reg_inner = residual.dot(&mu);
            let loss = recon + lambda_t * reg_inner;
            ensure_finite(loss, "loss", step, t)?;
            loss_mean += loss / batch;
            reg_mean += reg_inner / batch;
            if b == 0 {
                let eps_residual_norm = residual.dot(&residual).sqrt();
                record = Some(TraceRecord {
                    step,
                    t,
                    loss,
                    recon,
                    reg_inner,
                    eps_residual_norm,
                    signal_residual_norm: sg_t / alpha * eps_residual_norm,
                });
            }
        }
        grad_mu = (grad_mu / batch) + &recon_grad;
        grad_sigma /= batch;
        let mut record = record.expect("batch is nonempty");
        record.loss = loss_mean;
        record.reg_inner = reg_mean;
        ensure_finite(grad_mu.sum(), "gradient", step, record.t)?;
        ensure_finite(grad_sigma, "dispersion gradient", step, record.t)?;
        trace.records.push(record);

        mu_opt.step(opt.lr, &mut mu, &grad_mu);
        let mut sigma_vec = Array1::from_elem(1, sigma_q);
        sigma_opt.step(opt.lr, &mut sigma_vec, &Array1::from_elem(1, grad_sigma));
        sigma_q = sigma_vec[0].max(0.0);
    }
    Ok(DispersionOutput { mu, sigma_q, trace })
}

/// Instantaneous dispersion-gradient estimator at a fixed timestep; exposed
/// so verification code can Monte-Carlo average it directly.
#[allow(clippy::too_many_arguments)]
pub fn dispersion_grad_sample(
    mu: &Array1<f64>,
    sigma_q: f64,
    prior: &dyn ScorePrior,
    s: &NoiseSchedule,
    w: &WeightSchedule,
    t: usize,
    sigma_v: f64,
    eps: &Array1<f64>,
) -> f64 {
    let alpha = s.alpha(t);
    let sg_t = s.sigma(t);
    let snr = alpha / sg_t;
    let eta = (1.0 + sigma_q * sigma_q * snr * snr).sqrt();
    let x_t = alpha * mu + eta * sg_t * eps;
    let eps_pred = prior.predict_eps(&x_t, t, s);
    let lambda_t = w.lambda_at(s, t, sigma_v.max(SIGMA_V_FLOOR));
    sigma_q * lambda_t * 2.0 * snr / eta * eps.dot(&(&eps_pred - &(eps / eta)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{DenseLinear, ForwardOperator, HdrClip, InpaintingMask};
    use crate::priors::GaussianPrior;
    use ndarray::{array, Array2};

    fn paper_schedule() -> NoiseSchedule {
        NoiseSchedule::linear(1e-4, 0.02, 1000).unwrap()
    }

    struct IdentityOp {
        dim: usize,
        sigma_v: f64,
    }

    impl ForwardOperator for IdentityOp {
        fn in_dim(&self) -> usize {
            self.dim
        }
        fn out_dim(&self) -> usize {
            self.dim
        }
        fn sigma_v(&self) -> f64 {
            self.sigma_v
        }
        fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
            x.clone()
        }
        fn vjp(&self, _x: &Array1<f64>, u: &Array1<f64>) -> Array1<f64> {
            u.clone()
        }
        fn initial_estimate(&self, y: &Array1<f64>) -> Array1<f64> {
            y.clone()
        }
    }

    /// Prior that always returns a fixed vector but carries an arbitrarily
    /// large input sensitivity around a reference point. Evaluated at the
    /// reference it has the same output for every sensitivity, so a correct
    /// stopped gradient cannot depend on the sensitivity at all.
    struct StubPrior {
        output: Array1<f64>,
        reference: Array1<f64>,
        sensitivity: f64,
    }

    impl ScorePrior for StubPrior {
        fn dim(&self) -> usize {
            self.output.len()
        }
        fn predict_eps(&self, x_t: &Array1<f64>, _t: usize, _s: &NoiseSchedule) -> Array1<f64> {
            &self.output + self.sensitivity * &(x_t - &self.reference)
        }
    }

    #[test]
    fn lambda_families() {
        let s = NoiseSchedule::linear(0.5, 0.5, 1).unwrap(); // SNR_1 = 1
        let w = WeightSchedule::new(WeightKind::InvSnrPower(1.0), 0.25).unwrap();
        assert!((w.lambda_at(&s, 1, 1.0) - 0.25).abs() < 1e-14);

        let w0 = WeightSchedule::new(WeightKind::InvSnrPower(0.0), 0.7).unwrap();
        let paper = paper_schedule();
        for &t in &[1usize, 500, 1000] {
            assert_eq!(w0.lambda_at(&paper, t, 1.0), 0.7);
        }

        // SNR = 4 with square-root decay gives lambda / 2
        let s4 = NoiseSchedule::from_parts(vec![0.5], vec![0.8], vec![0.2]).unwrap();
        let wh = WeightSchedule::new(WeightKind::InvSnrPower(0.5), 0.6).unwrap();
        assert!((wh.lambda_at(&s4, 1, 1.0) - 0.3).abs() < 1e-14);

        let wm = WeightSchedule::new(WeightKind::MaxLikelihood(vec![0.5]), 1.0).unwrap();
        // 2 * T * sigma_v^2 * snr * omega' = 2 * 1 * 4 * 4 * 0.5
        assert!((wm.lambda_at(&s4, 1, 2.0) - 16.0).abs() < 1e-12);

        assert!(WeightSchedule::new(WeightKind::InvSnrPower(-1.0), 0.1).is_err());
        assert!(WeightSchedule::new(WeightKind::Constant, -0.1).is_err());
        assert!(WeightSchedule::new(WeightKind::MaxLikelihood(vec![-0.1]), 1.0).is_err());
        // lambda = 0 disables the regularizer and must be accepted
        assert!(WeightSchedule::new(WeightKind::Constant, 0.0).is_ok());
    }

    #[test]
    fn step_loss_fixed_point_is_zero() {
        // f = identity, y = mu, eps_pred = eps exactly -> loss 0, grad 0
        let s = paper_schedule();
        let mu = array![0.4, -0.2, 1.0];
        let op = IdentityOp {
            dim: 3,
            sigma_v: 0.0,
        };
        let m = Measurement::new(mu.clone(), &op).unwrap();
        let eps = array![0.3, -1.0, 0.8];
        let t = 700;
        let x_t = s.diffuse(&mu, t, &eps).unwrap();
        let stub = StubPrior {
            output: eps.clone(),
            reference: x_t,
            sensitivity: 0.0,
        };
        let w = WeightSchedule::inv_snr(0.25);
        let eval =
            red_diff_step_loss(&VariationalState::point(mu), &m, &stub, &s, &w, t, &eps).unwrap();
        assert_eq!(eval.loss, 0.0);
        assert!(eval.grad_mu.iter().all(|g| g.abs() < 1e-15));
        assert_eq!(eval.record.eps_residual_norm, 0.0);
    }

    #[test]
    fn step_loss_hand_computed_residual() {
        // standard-normal prior, alpha = 0.6, sigma = 0.8, mu = 1, eps = 0.5:
        // residual = sigma*alpha*mu - alpha^2*eps = 0.48 - 0.18 = 0.30
        let s = NoiseSchedule::linear(0.64, 0.64, 1).unwrap();
        let prior = GaussianPrior::standard(1);
        let op = IdentityOp {
            dim: 1,
            sigma_v: 0.0,
        };
        let mu = array![1.0];
        let m = Measurement::new(mu.clone(), &op).unwrap();
        let w = WeightSchedule::inv_snr(0.25);
        let eval = red_diff_step_loss(
            &VariationalState::point(mu.clone()),
            &m,
            &prior,
            &s,
            &w,
            1,
            &array![0.5],
        )
        .unwrap();
        let r = eval.record.eps_residual_norm;
        assert!((r - 0.30).abs() < 1e-12, "residual {r}");
        // grad = lambda_1 * r since recon part vanishes at y = mu
        let lambda_1 = 0.25 * s.sigma(1) / s.alpha(1);
        assert!((eval.grad_mu[0] - lambda_1 * 0.30).abs() < 1e-12);
        // signal residual obeys the identity
        assert_eq!(
            eval.record.signal_residual_norm,
            s.sigma(1) / s.alpha(1) * eval.record.eps_residual_norm
        );
    }

    #[test]
    fn recon_gradient_matches_finite_difference_for_hdr() {
        let s = paper_schedule();
        let op = HdrClip::new(3, 0.1).unwrap();
        let y = array![0.3, -0.5, 0.8];
        let m = Measurement::new(y.clone(), &op).unwrap();
        // keep all coordinates away from the clip boundary
        let mu = array![0.1, -0.35, 0.42];
        let prior = GaussianPrior::standard(3);
        let w = WeightSchedule::new(WeightKind::Constant, 0.0).unwrap();
        let eps = array![0.0, 0.0, 0.0];
        let eval = red_diff_step_loss(
            &VariationalState::point(mu.clone()),
            &m,
            &prior,
            &s,
            &w,
            300,
            &eps,
        )
        .unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut p = mu.clone();
            let mut q = mu.clone();
            p[i] += h;
            q[i] -= h;
            let f = |v: &Array1<f64>| {
                let d = &op.apply(v) - &y;
                d.dot(&d)
            };
            let fd = (f(&p) - f(&q)) / (2.0 * h);
            let rel = (fd - eval.grad_mu[i]).abs() / eval.grad_mu[i].abs().max(1.0);
            assert!(rel < 1e-5, "coord {i}: fd={fd} grad={}", eval.grad_mu[i]);
        }
    }

    #[test]
    fn stopped_gradient_ignores_prior_sensitivity() {
        let s = paper_schedule();
        let mu = array![0.7, -0.4];
        let op = IdentityOp {
            dim: 2,
            sigma_v: 0.0,
        };
        let m = Measurement::new(mu.clone(), &op).unwrap();
        let w = WeightSchedule::inv_snr(0.25);
        let t = 450;
        let eps = array![0.9, -1.1];
        let x_t = s.diffuse(&mu, t, &eps).unwrap();
        let out = array![0.2, 0.6];
        let lambda_t = w.lambda_at(&s, t, SIGMA_V_FLOOR);

        let mut grads = Vec::new();
        for sensitivity in [0.0, 1.0, 1e8] {
            let stub = StubPrior {
                output: out.clone(),
                reference: x_t.clone(),
                sensitivity,
            };
            let eval = red_diff_step_loss(
                &VariationalState::point(mu.clone()),
                &m,
                &stub,
                &s,
                &w,
                t,
                &eps,
            )
            .unwrap();
            grads.push(eval.grad_mu);
        }
        // identical regardless of sensitivity, and equal to lambda_t * residual
        assert_eq!(grads[0], grads[1]);
        assert_eq!(grads[0], grads[2]);
        let expect = lambda_t * (&out - &eps);
        for i in 0..2 {
            assert_eq!(grads[0][i], expect[i]);
        }
    }

    #[test]
    fn unregularized_run_reaches_least_squares_solution() {
        // lambda = 0 with an invertible A reduces to plain least squares
        let a = Array2::from_shape_vec(
            (4, 4),
            vec![
                1.2, 0.1, -0.2, 0.0, //
                0.05, 0.9, 0.1, -0.1, //
                -0.1, 0.2, 1.1, 0.05, //
                0.0, -0.05, 0.1, 0.95,
            ],
        )
        .unwrap();
        let op = DenseLinear::new(a.clone(), SIGMA_V_FLOOR).unwrap();
        let x_true = array![0.5, -1.0, 0.25, 0.8];
        let y = op.apply(&x_true);
        let m = Measurement::new(y, &op).unwrap();
        let s = paper_schedule();
        let prior = GaussianPrior::standard(4);
        let w = WeightSchedule::new(WeightKind::InvSnrPower(1.0), 0.0).unwrap();
        let plan = TimestepPlan::descending(1000);
        let opt = OptimizerConfig::adam(0.02, 1000);
        let out = sample(&m, &prior, &s, &w, &plan, &opt, 42).unwrap();
        // noiseless invertible system: least squares solution is x_true
        let err = (&out.mu - &x_true).mapv(|v| v * v).sum().sqrt() / x_true.dot(&x_true).sqrt();
        assert!(err < 1e-3, "relative error {err}");
        assert_eq!(out.trace.records.len(), 1000);
    }

    #[test]
    fn scalar_gaussian_map_with_calibrated_lambda() {
        // prior N(0,1), A = (1), y = 2, sigma_v = 1: the posterior mode is 1.
        // A large-batch random plan keeps the stochastic gradient close to its
        // expectation, whose stationary point is the MAP at the calibrated
        // lambda.
        let s = paper_schedule();
        let mean_sigma_sq: f64 = (1..=s.t_max())
            .map(|t| s.sigma(t) * s.sigma(t))
            .sum::<f64>()
            / s.t_max() as f64;
        let sigma_v = 1.0;
        let lambda_star = 2.0 * sigma_v * sigma_v / mean_sigma_sq;
        let op = DenseLinear::new(Array2::from_elem((1, 1), 1.0), sigma_v).unwrap();
        let m = Measurement::new(array![2.0], &op).unwrap();
        let prior = GaussianPrior::standard(1);
        let w = WeightSchedule::inv_snr(lambda_star);
        let plan = TimestepPlan::new(PlanKind::MinibatchRandom { batch: 128 }, 2000).unwrap();
        let opt = OptimizerConfig::adam(0.1, 2000);
        let out = sample(&m, &prior, &s, &w, &plan, &opt, 3).unwrap();
        assert!(
            (out.mu[0] - 1.0).abs() < 0.1,
            "expected ~1.0, got {}",
            out.mu[0]
        );
    }

    #[test]
    fn identical_seeds_reproduce_bitwise_different_seeds_do_not() {
        let s = paper_schedule();
        let op = InpaintingMask::new(vec![true, false, true], 0.05).unwrap();
        let m = Measurement::new(array![0.5, -0.3], &op).unwrap();
        let prior = GaussianPrior::standard(3);
        let w = WeightSchedule::inv_snr(0.25);
        let plan = TimestepPlan::new(PlanKind::Random, 50).unwrap();
        let opt = OptimizerConfig::adam(0.1, 50);
        let a = sample(&m, &prior, &s, &w, &plan, &opt, 7).unwrap();
        let b = sample(&m, &prior, &s, &w, &plan, &opt, 7).unwrap();
        assert_eq!(a.mu, b.mu);
        assert_eq!(a.trace.to_csv(), b.trace.to_csv());
        let c = sample(&m, &prior, &s, &w, &plan, &opt, 8).unwrap();
        assert_ne!(a.mu, c.mu);
    }

    #[test]
    fn plan_and_optimizer_steps_must_agree() {
        let s = paper_schedule();
        let op = IdentityOp {
            dim: 1,
            sigma_v: 0.0,
        };
        let m = Measurement::new(array![1.0], &op).unwrap();
        let prior = GaussianPrior::standard(1);
        let w = WeightSchedule::inv_snr(0.25);
        let plan = TimestepPlan::descending(10);
        let opt = OptimizerConfig::adam(0.1, 20);
        assert!(sample(&m, &prior, &s, &w, &plan, &opt, 0).is_err());
    }

    #[test]
    fn dispersion_eta_and_sigma_zero_degeneracy() {
        // eta at sigma = 1, SNR = 1 is sqrt(2)
        let s1 = NoiseSchedule::linear(0.5, 0.5, 1).unwrap();
        let snr = s1.alpha(1) / s1.sigma(1);
        let eta = (1.0 + 1.0 * snr * snr).sqrt();
        assert!((eta - 2.0_f64.sqrt()).abs() < 1e-12);

        // sigma_init = 0: dispersion gradient is exactly 0 and sigma stays 0
        let s = paper_schedule();
        let op = IdentityOp {
            dim: 2,
            sigma_v: 0.05,
        };
        let m = Measurement::new(array![0.3, -0.6], &op).unwrap();
        let prior = GaussianPrior::standard(2);
        let w = WeightSchedule::inv_snr(0.25);
        let plan = TimestepPlan::descending(40);
        let opt = OptimizerConfig::adam(0.1, 40);
        let out = sample_with_dispersion(&m, &prior, &s, &w, &plan, &opt, 5, 0.0).unwrap();
        assert_eq!(out.sigma_q, 0.0);

        let g = dispersion_grad_sample(
            &array![0.3, -0.6],
            0.0,
            &prior,
            &s,
            &w,
            500,
            0.05,
            &array![1.0, -0.5],
        );
        assert_eq!(g, 0.0);
    }

    #[test]
    fn dispersion_x_t_matches_point_mass_at_sigma_zero() {
        // with sigma_q = 0 the first diffused state and eps draw coincide with
        // the point-mass sampler's (same seed, same draw order)
        let s = paper_schedule();
        let op = IdentityOp {
            dim: 2,
            sigma_v: 0.05,
        };
        let m = Measurement::new(array![0.3, -0.6], &op).unwrap();
        let prior = GaussianPrior::standard(2);
        let w = WeightSchedule::inv_snr(0.25);
        let plan = TimestepPlan::descending(1);
        let opt = OptimizerConfig::adam(0.1, 1);
        let a = sample(&m, &prior, &s, &w, &plan, &opt, 11).unwrap();
        let b = sample_with_dispersion(&m, &prior, &s, &w, &plan, &opt, 11, 0.0).unwrap();
        // same t, same recon, same residual norms in the first record
        assert_eq!(a.trace.records[0].t, b.trace.records[0].t);
        assert_eq!(a.trace.records[0].recon, b.trace.records[0].recon);
        assert_eq!(
            a.trace.records[0].eps_residual_norm,
            b.trace.records[0].eps_residual_norm
        );
    }

    #[test]
    fn trace_identity_holds_on_every_record() {
        let s = paper_schedule();
        let op = InpaintingMask::new(vec![true, true, false, true], 0.1).unwrap();
        let m = Measurement::new(array![0.2, -0.4, 0.9], &op).unwrap();
        let prior = GaussianPrior::standard(4);
        let w = WeightSchedule::inv_snr(0.25);
        let plan = TimestepPlan::new(PlanKind::MinibatchRandom { batch: 3 }, 60).unwrap();
        let opt = OptimizerConfig::adam(0.05, 60);
        let out = sample(&m, &prior, &s, &w, &plan, &opt, 13).unwrap();
        for r in &out.trace.records {
            let factor = s.sigma(r.t) / s.alpha(r.t);
            assert_eq!(r.signal_residual_norm, factor * r.eps_residual_norm);
        }
    }

    #[test]
    fn minibatch_gradient_is_averaged_not_summed() {
        // one SGD step with a batch of 4 must move mu by lr * mean(grad_b),
        // replayed here with the same seed and draw order
        use rand::SeedableRng;
        let s = paper_schedule();
        let op = IdentityOp {
            dim: 2,
            sigma_v: 0.05,
        };
        let y = array![0.4, -0.7];
        let m = Measurement::new(y.clone(), &op).unwrap();
        let prior = GaussianPrior::standard(2);
        let w = WeightSchedule::inv_snr(0.25);
        let batch = 4;
        let plan = TimestepPlan::new(PlanKind::MinibatchDescending { batch }, 1).unwrap();
        let opt = OptimizerConfig::sgd(1.0, 0.0, 1);
        let seed = 23;
        let out = sample(&m, &prior, &s, &w, &plan, &opt, seed).unwrap();

        let mu0 = op.initial_estimate(&y);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let timesteps = descending_timesteps(batch, s.t_max());
        let mut mean_grad = Array1::<f64>::zeros(2);
        for &t in &timesteps {
            let eps = randn(2, &mut rng);
            let eval = red_diff_step_loss(
                &VariationalState::point(mu0.clone()),
                &m,
                &prior,
                &s,
                &w,
                t,
                &eps,
            )
            .unwrap();
            mean_grad += &eval.grad_mu;
        }
        mean_grad.mapv_inplace(|g| g / batch as f64);
        let expected = &mu0 - &mean_grad;
        for i in 0..2 {
            assert!(
                (out.mu[i] - expected[i]).abs() < 1e-14,
                "coordinate {i}: {} vs {}",
                out.mu[i],
                expected[i]
            );
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        let s = paper_schedule();
        let op = IdentityOp {
            dim: 2,
            sigma_v: 0.0,
        };
        // a NaN observation poisons the reconstruction term immediately
        let m = Measurement::new(array![f64::NAN, 0.0], &op).unwrap();
        let prior = GaussianPrior::standard(2);
        let w = WeightSchedule::inv_snr(0.25);
        let plan = TimestepPlan::descending(5);
        let opt = OptimizerConfig::adam(0.1, 5);
        let err = sample(&m, &prior, &s, &w, &plan, &opt, 0).unwrap_err();
        assert!(
            matches!(err, crate::Error::NonFinite { step: 1, .. }),
            "got {err:?}"
        );
    }

    #[test]
    fn dispersion_run_keeps_sigma_nonnegative_and_converges() {
        let s = paper_schedule();
        let op = IdentityOp {
            dim: 3,
            sigma_v: 0.05,
        };
        let y = array![0.5, -0.2, 0.1];
        let m = Measurement::new(y.clone(), &op).unwrap();
        let prior = GaussianPrior::standard(3);
        let w = WeightSchedule::inv_snr(0.25);
        let plan = TimestepPlan::descending(500);
        let opt = OptimizerConfig::adam(0.05, 500);
        let out = sample_with_dispersion(&m, &prior, &s, &w, &plan, &opt, 6, 0.5).unwrap();
        assert!(out.sigma_q >= 0.0 && out.sigma_q.is_finite());
        assert_eq!(out.trace.records.len(), 500);
        let rel = (&out.mu - &y).mapv(|v| v * v).sum().sqrt() / y.dot(&y).sqrt();
        assert!(rel < 0.2, "mean drifted: relative error {rel}");
    }
}

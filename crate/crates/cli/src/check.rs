//! Self-contained verification suite behind `reddiff check`: every item
//! compares library behavior against an independent route (closed forms,
//! finite differences, compensated arithmetic, Monte Carlo) and prints one
//! pass/fail line.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use reddiff::operators::{
    BlockAverageDownsample, DenseLinear, DftMagnitude, ForwardOperator, GaussianBlur, HdrClip,
    InpaintingMask, Measurement,
};
use reddiff::oracle::{finite_diff_scalar, grid_posterior_1d, GridSpec, LinearGaussianProblem};
use reddiff::priors::{mmse_estimate, randn, GaussianMixturePrior, GaussianPrior, ScorePrior};
use reddiff::sampler::{
    self, dispersion_grad_sample, red_diff_step_loss, OptimizerConfig, TimestepPlan,
    VariationalState, WeightSchedule,
};
use reddiff::schedule::NoiseSchedule;

type CheckResult = Result<(), String>;
type CheckItem = (&'static str, fn() -> CheckResult);

fn paper_schedule() -> NoiseSchedule {
    NoiseSchedule::linear(1e-4, 0.02, 1000).expect("paper schedule")
}

fn randv(rng: &mut ChaCha20Rng, n: usize) -> Array1<f64> {
    Array1::from_iter((0..n).map(|_| rng.gen_range(-1.0..1.0)))
}

/// Inner-product adjoint test on random probes.
pub fn adjoint_check(op: &dyn ForwardOperator, trials: usize, tol: f64, seed: u64) -> CheckResult {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for i in 0..trials {
        let x = randv(&mut rng, op.in_dim());
        let u = randv(&mut rng, op.out_dim());
        let lhs = op.apply(&x).dot(&u);
        let rhs = x.dot(&op.vjp(&x, &u));
        if (lhs - rhs).abs() > tol {
            return Err(format!(
                "trial {i}: <f(x),u> = {lhs} but <x, vjp(x,u)> = {rhs}"
            ));
        }
    }
    Ok(())
}

/// VJP versus central finite differences of `x -> <u, f(x)>`.
pub fn vjp_fd_check(
    op: &dyn ForwardOperator,
    x: &Array1<f64>,
    u: &Array1<f64>,
    rel_tol: f64,
) -> CheckResult {
    let h = 1e-5;
    let g = op.vjp(x, u);
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let fd = (op.apply(&xp).dot(u) - op.apply(&xm).dot(u)) / (2.0 * h);
        let rel = (fd - g[i]).abs() / g[i].abs().max(1.0);
        if rel > rel_tol {
            return Err(format!("coordinate {i}: fd {fd} vs vjp {}", g[i]));
        }
    }
    Ok(())
}

fn check_schedule_exactness() -> CheckResult {
    let s = paper_schedule();
    for t in 1..=s.t_max() {
        let gap = (s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t) - 1.0).abs();
        if gap > 1e-12 {
            return Err(format!("alpha^2 + sigma^2 deviates by {gap} at t={t}"));
        }
    }
    // compensated (Kahan) log-domain product as the independent route
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for i in 1..=1000usize {
        let beta = 1e-4 + ((i - 1) as f64 / 999.0) * (0.02 - 1e-4);
        let term = (-beta).ln_1p();
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    let oracle = (0.5 * sum).exp();
    let rel = (s.alpha(1000) - oracle).abs() / oracle;
    if rel > 1e-10 {
        return Err(format!("alpha_1000 off by {rel} relative"));
    }
    Ok(())
}

fn check_snr_monotonic() -> CheckResult {
    let s = paper_schedule();
    let mut prev = f64::INFINITY;
    for t in 1..=s.t_max() {
        let v = s.snr(t).map_err(|e| e.to_string())?;
        if v >= prev {
            return Err(format!("snr({t}) = {v} not below snr({}) = {prev}", t - 1));
        }
        prev = v;
    }
    Ok(())
}

fn check_linear_adjoints() -> CheckResult {
    let mut rng = ChaCha20Rng::seed_from_u64(41);
    let dense = DenseLinear::new(
        Array2::from_shape_fn((6, 4), |_| rng.gen_range(-1.0..1.0)),
        0.0,
    )
    .map_err(|e| e.to_string())?;
    let ops: Vec<(&str, Box<dyn ForwardOperator>)> = vec![
        (
            "inpainting",
            Box::new(
                InpaintingMask::new(vec![true, false, true, true, false, true], 0.0)
                    .map_err(|e| e.to_string())?,
            ),
        ),
        (
            "downsample",
            Box::new(BlockAverageDownsample::new(6, 4, 2, 0.0).map_err(|e| e.to_string())?),
        ),
        (
            "blur",
            Box::new(GaussianBlur::new(8, 8, 1.4, 5, 0.0).map_err(|e| e.to_string())?),
        ),
        ("dense_linear", Box::new(dense)),
    ];
    for (name, op) in &ops {
        adjoint_check(op.as_ref(), 20, 1e-10, 17).map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(())
}

fn check_nonlinear_vjps() -> CheckResult {
    let mut rng = ChaCha20Rng::seed_from_u64(43);
    let hdr = HdrClip::new(5, 0.0).map_err(|e| e.to_string())?;
    // keep probes strictly inside / outside the clip region
    let x = Array1::from_vec(vec![0.1, -0.3, 0.44, -0.2, 0.05]);
    let u = randv(&mut rng, 5);
    vjp_fd_check(&hdr, &x, &u, 1e-5).map_err(|e| format!("hdr: {e}"))?;

    // exact region derivative: 2 inside, 0 in saturation
    let probe = Array1::from_vec(vec![0.2, 0.9, -0.9, 0.49, -0.51]);
    let unit = Array1::ones(5);
    let g = hdr.vjp(&probe, &unit);
    let expect = [2.0, 0.0, 0.0, 2.0, 0.0];
    for i in 0..5 {
        if g[i] != expect[i] {
            return Err(format!("hdr derivative at {i}: {} != {}", g[i], expect[i]));
        }
    }

    let dft = DftMagnitude::new(6, 2, 0.0).map_err(|e| e.to_string())?;
    let x = randv(&mut rng, 6) + 0.4;
    let u = randv(&mut rng, 12);
    vjp_fd_check(&dft, &x, &u, 1e-5).map_err(|e| format!("dft_magnitude: {e}"))?;
    Ok(())
}

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

fn check_score_finite_difference() -> CheckResult {
    let s = paper_schedule();
    let prior = GaussianMixturePrior::new(
        vec![0.45, 0.35, 0.2],
        vec![
            Array1::from_vec(vec![1.0, -0.5]),
            Array1::from_vec(vec![-1.2, 0.8]),
            Array1::from_vec(vec![0.2, 1.8]),
        ],
        vec![0.5, 0.8, 0.3],
    )
    .map_err(|e| e.to_string())?;
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let h = 1e-5;
    for probe in 0..100 {
        let t = rng.gen_range(1..=1000);
        let x = Array1::from_iter((0..2).map(|_| rng.gen_range(-2.0..2.0)));
        let eps = prior.predict_eps(&x, t, &s);
        let score = -&eps / s.sigma(t);
        let mut fd = Array1::zeros(2);
        for i in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            fd[i] = (gmm_diffused_log_density(&prior, &s, t, &xp)
                - gmm_diffused_log_density(&prior, &s, t, &xm))
                / (2.0 * h);
        }
        let num = (&fd - &score).mapv(|v| v * v).sum().sqrt();
        let den = score.mapv(|v| v * v).sum().sqrt().max(1e-9);
        if num / den > 1e-6 {
            return Err(format!(
                "probe {probe} (t={t}): relative error {}",
                num / den
            ));
        }
    }
    Ok(())
}

fn check_residual_identity() -> CheckResult {
    let s = paper_schedule();
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    for _ in 0..50 {
        let t = rng.gen_range(1..=1000);
        let mu = randv(&mut rng, 3);
        let eps = randn(3, &mut rng);
        let eps_pred = randn(3, &mut rng);
        let x_t = s.diffuse(&mu, t, &eps).map_err(|e| e.to_string())?;
        let est = mmse_estimate(&x_t, t, &eps_pred, &s).map_err(|e| e.to_string())?;
        let ratio = s.sigma(t) / s.alpha(t);
        for i in 0..3 {
            let lhs = mu[i] - est[i];
            let rhs = ratio * (eps_pred[i] - eps[i]);
            if (lhs - rhs).abs() > 1e-10 * lhs.abs().max(1.0) {
                return Err(format!("t={t}, coord {i}: {lhs} vs {rhs}"));
            }
        }
    }
    // the amplification factor is strictly increasing in t
    for t in 1..1000 {
        if s.sigma(t + 1) / s.alpha(t + 1) <= s.sigma(t) / s.alpha(t) {
            return Err(format!("sigma/alpha not increasing at t={t}"));
        }
    }
    Ok(())
}

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

fn check_stopped_gradient() -> CheckResult {
    let s = paper_schedule();
    let mu = Array1::from_vec(vec![0.7, -0.4]);
    let op = DenseLinear::new(Array2::eye(2), 0.0).map_err(|e| e.to_string())?;
    let m = Measurement::new(mu.clone(), &op).map_err(|e| e.to_string())?;
    let w = WeightSchedule::inv_snr(0.25);
    let t = 450;
    let eps = Array1::from_vec(vec![0.9, -1.1]);
    let x_t = s.diffuse(&mu, t, &eps).map_err(|e| e.to_string())?;
    let out = Array1::from_vec(vec![0.2, 0.6]);
    let mut grads = Vec::new();
    for sensitivity in [0.0, 1e6] {
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
        .map_err(|e| e.to_string())?;
        grads.push(eval.grad_mu);
    }
    if grads[0] != grads[1] {
        return Err("gradient depends on the prior's input sensitivity".into());
    }
    let lambda_t = w.lambda_at(&s, t, sampler::SIGMA_V_FLOOR);
    let expect = lambda_t * (&out - &eps);
    for i in 0..2 {
        if grads[0][i] != expect[i] {
            return Err(format!(
                "regularizer gradient {} != lambda_t * residual {}",
                grads[0][i], expect[i]
            ));
        }
    }
    Ok(())
}

fn check_expected_gradient_law() -> CheckResult {
    // standard-normal prior: E[lambda_t (eps_pred - eps)] = lambda sigma_t^2 mu
    let s = paper_schedule();
    let prior = GaussianPrior::standard(4);
    let mu = Array1::from_vec(vec![0.8, -0.5, 1.2, 0.3]);
    let lambda = 0.25;
    let w = WeightSchedule::inv_snr(lambda);
    let n = 100_000usize;
    let mut rng = ChaCha20Rng::seed_from_u64(4096);
    for &t in &[1usize, 250, 500, 750, 1000] {
        let lambda_t = w.lambda_at(&s, t, 1.0);
        let mut mean = Array1::<f64>::zeros(4);
        let mut msq = Array1::<f64>::zeros(4);
        for _ in 0..n {
            let eps = randn(4, &mut rng);
            let x_t = s.diffuse(&mu, t, &eps).map_err(|e| e.to_string())?;
            let sample = lambda_t * &(&prior.predict_eps(&x_t, t, &s) - &eps);
            mean += &sample;
            msq += &sample.mapv(|v| v * v);
        }
        mean.mapv_inplace(|v| v / n as f64);
        let target = lambda * s.sigma(t) * s.sigma(t) * &mu;
        for i in 0..4 {
            let var = msq[i] / n as f64 - mean[i] * mean[i];
            let se = (var / n as f64).sqrt();
            let gap = (mean[i] - target[i]).abs();
            if gap > 3.0 * se.max(1e-15) {
                return Err(format!(
                    "t={t}, coord {i}: |{} - {}| = {gap} > 3 SE = {}",
                    mean[i],
                    target[i],
                    3.0 * se
                ));
            }
        }
    }
    Ok(())
}

/// The linear-Gaussian recovery problem shared by `check` and the acceptance
/// suite: near-identity 16-dim system, small observation noise.
pub fn map_benchmark() -> (LinearGaussianProblem, Array1<f64>) {
    let mut rng = ChaCha20Rng::seed_from_u64(314159);
    let n = 16;
    let mut a = Array2::eye(n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] += 0.05 * rng.gen_range(-1.0..1.0);
        }
    }
    let sigma_v = 0.05;
    let problem = LinearGaussianProblem::new(a.clone(), sigma_v, Array1::zeros(n), 1.0)
        .expect("valid problem");
    let x_true = randn(n, &mut rng);
    let noise = randn(a.nrows(), &mut rng);
    let y = a.dot(&x_true) + sigma_v * &noise;
    (problem, y)
}

pub fn run_map_recovery() -> Result<(Array1<f64>, Array1<f64>), String> {
    let s = paper_schedule();
    let (problem, y) = map_benchmark();
    let map = problem.analytic_map(&y).map_err(|e| e.to_string())?;
    let lambda = problem.calibrated_lambda(&s).map_err(|e| e.to_string())?;
    let op = DenseLinear::new(problem.a.clone(), problem.sigma_v).map_err(|e| e.to_string())?;
    let m = Measurement::new(y, &op).map_err(|e| e.to_string())?;
    let prior = GaussianPrior::standard(16);
    let w = WeightSchedule::inv_snr(lambda);
    let plan = TimestepPlan::descending(2000);
    let opt = OptimizerConfig::adam(0.1, 2000);
    let out = sampler::sample(&m, &prior, &s, &w, &plan, &opt, 2718).map_err(|e| e.to_string())?;
    Ok((out.mu, map))
}

fn check_map_convergence() -> CheckResult {
    let (mu, map) = run_map_recovery()?;
    let rel = (&mu - &map).mapv(|v| v * v).sum().sqrt() / map.dot(&map).sqrt();
    if rel > 0.02 {
        return Err(format!("relative distance to analytic MAP: {rel}"));
    }
    Ok(())
}

fn check_grid_consistency() -> CheckResult {
    let s = paper_schedule();
    let sigma_v = 0.05;
    let a = Array2::from_elem((1, 1), 1.2);
    let problem = LinearGaussianProblem::new(a.clone(), sigma_v, Array1::zeros(1), 1.0)
        .map_err(|e| e.to_string())?;
    let y = Array1::from_vec(vec![1.1]);
    let map = problem.analytic_map(&y).map_err(|e| e.to_string())?;
    let lambda = problem.calibrated_lambda(&s).map_err(|e| e.to_string())?;
    let op = DenseLinear::new(a, sigma_v).map_err(|e| e.to_string())?;
    let m = Measurement::new(y, &op).map_err(|e| e.to_string())?;
    let prior = GaussianPrior::standard(1);
    let w = WeightSchedule::inv_snr(lambda);
    let plan = TimestepPlan::descending(2000);
    let opt = OptimizerConfig::adam(0.1, 2000);
    let out = sampler::sample(&m, &prior, &s, &w, &plan, &opt, 99).map_err(|e| e.to_string())?;

    let gmm = GaussianMixturePrior::new(vec![1.0], vec![Array1::zeros(1)], vec![1.0])
        .map_err(|e| e.to_string())?;
    let grid = GridSpec {
        lo: map[0] - 2.0,
        hi: map[0] + 2.0,
        n: 801,
    };
    let post = grid_posterior_1d(&gmm, &m, &grid).map_err(|e| e.to_string())?;
    if (post.argmax - map[0]).abs() > post.cell {
        return Err(format!(
            "grid argmax {} vs analytic map {}",
            post.argmax, map[0]
        ));
    }
    if (out.mu[0] - post.argmax).abs() > post.cell {
        return Err(format!(
            "sampler result {} vs grid argmax {} (cell {})",
            out.mu[0], post.argmax, post.cell
        ));
    }
    Ok(())
}

fn check_dispersion_gradient() -> CheckResult {
    let s = paper_schedule();
    let t = 500;
    let dim = 4;
    let prior_mean = Array1::from_vec(vec![0.4, -0.2, 0.1, 0.5]);
    let tau_sq = 0.8;
    let prior = GaussianPrior::new(prior_mean.clone(), tau_sq).map_err(|e| e.to_string())?;
    let mu = &prior_mean + 0.1;
    let sigma_q = 0.5;
    let lambda = 0.25;
    let w = WeightSchedule::inv_snr(lambda);
    let sigma_v = 1.0;

    // exact zero at sigma_q = 0
    let mut rng = ChaCha20Rng::seed_from_u64(55);
    let g0 = dispersion_grad_sample(&mu, 0.0, &prior, &s, &w, t, sigma_v, &randn(dim, &mut rng));
    if g0 != 0.0 {
        return Err(format!("dispersion gradient at sigma = 0 is {g0}, not 0"));
    }

    // Monte-Carlo mean of the estimator against the closed-form weighted KL
    let n = 100_000usize;
    let mut acc = 0.0;
    for _ in 0..n {
        acc += dispersion_grad_sample(
            &mu,
            sigma_q,
            &prior,
            &s,
            &w,
            t,
            sigma_v,
            &randn(dim, &mut rng),
        );
    }
    let mc = acc / n as f64;

    let alpha = s.alpha(t);
    let sg_t = s.sigma(t);
    let lambda_t = w.lambda_at(&s, t, sigma_v);
    let weighted_kl = |sigma: f64| -> f64 {
        let s_q2 = alpha * alpha * sigma * sigma + sg_t * sg_t;
        let s_p2 = alpha * alpha * tau_sq + sg_t * sg_t;
        let ratio = s_q2 / s_p2;
        let mean_gap = alpha * alpha * (&mu - &prior_mean).mapv(|v| v * v).sum();
        let kl = 0.5 * dim as f64 * (ratio - 1.0 - ratio.ln()) + mean_gap / (2.0 * s_p2);
        2.0 * lambda_t * sg_t / alpha * kl
    };
    let fd = finite_diff_scalar(weighted_kl, sigma_q, 1e-4);
    let rel = (mc - fd).abs() / fd.abs();
    if rel > 0.02 {
        return Err(format!("MC {mc} vs finite difference {fd}: {rel} relative"));
    }
    Ok(())
}

fn check_determinism() -> CheckResult {
    let s = paper_schedule();
    let op = InpaintingMask::new(vec![true, false, true], 0.05).map_err(|e| e.to_string())?;
    let m = Measurement::new(Array1::from_vec(vec![0.5, -0.3]), &op).map_err(|e| e.to_string())?;
    let prior = GaussianPrior::standard(3);
    let w = WeightSchedule::inv_snr(0.25);
    let plan = TimestepPlan::new(sampler::PlanKind::Random, 100).map_err(|e| e.to_string())?;
    let opt = OptimizerConfig::adam(0.1, 100);
    let a = sampler::sample(&m, &prior, &s, &w, &plan, &opt, 7).map_err(|e| e.to_string())?;
    let b = sampler::sample(&m, &prior, &s, &w, &plan, &opt, 7).map_err(|e| e.to_string())?;
    if a.trace.to_csv() != b.trace.to_csv() || a.mu != b.mu {
        return Err("same seed produced different runs".into());
    }
    let c = sampler::sample(&m, &prior, &s, &w, &plan, &opt, 8).map_err(|e| e.to_string())?;
    if a.mu == c.mu {
        return Err("different seeds produced identical output".into());
    }
    Ok(())
}

fn check_lambda_scaling() -> CheckResult {
    let s = paper_schedule();
    let p1 = LinearGaussianProblem::new(Array2::eye(2), 0.3, Array1::zeros(2), 1.0)
        .map_err(|e| e.to_string())?;
    let p2 = LinearGaussianProblem::new(Array2::eye(2), 0.6, Array1::zeros(2), 1.0)
        .map_err(|e| e.to_string())?;
    let l1 = p1.calibrated_lambda(&s).map_err(|e| e.to_string())?;
    let l2 = p2.calibrated_lambda(&s).map_err(|e| e.to_string())?;
    if ((l2 / l1) - 4.0).abs() > 1e-12 {
        return Err(format!("doubling sigma_v scaled lambda by {}", l2 / l1));
    }
    Ok(())
}

/// Runs every check, printing one line per item. Returns process exit code.
pub fn run_all() -> i32 {
    let items: Vec<CheckItem> = vec![
        ("schedule_exactness", check_schedule_exactness),
        ("snr_monotonic", check_snr_monotonic),
        ("operator_adjoints", check_linear_adjoints),
        ("nonlinear_vjps", check_nonlinear_vjps),
        ("score_finite_difference", check_score_finite_difference),
        ("residual_identity", check_residual_identity),
        ("stopped_gradient", check_stopped_gradient),
        ("expected_gradient_law", check_expected_gradient_law),
        ("map_convergence", check_map_convergence),
        ("grid_consistency", check_grid_consistency),
        ("dispersion_gradient", check_dispersion_gradient),
        ("determinism", check_determinism),
        ("lambda_scaling", check_lambda_scaling),
    ];
    let mut failures = 0;
    for (name, item) in items {
        match item() {
            Ok(()) => println!("PASS {name}"),
            Err(msg) => {
                failures += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    if failures == 0 {
        println!("all checks passed");
        0
    } else {
        println!("{failures} check(s) failed");
        1
    }
}

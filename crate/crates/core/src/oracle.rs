//! Independent ground-truth computations for verification: the closed-form
//! linear-Gaussian MAP, the lambda calibration that aligns the sampler's
//! expected stationary point with it, central finite differences, and a
//! brute-force 1-D posterior on a grid.
//!
//! Nothing here reuses the sampler's code paths; that independence is what
//! makes these functions usable as oracles in tests and in `check`.

use ndarray::{Array1, Array2};

use crate::operators::Measurement;
use crate::priors::GaussianMixturePrior;
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

/// `y = A x + v`, `v ~ N(0, sigma_v^2 I)`, prior `x ~ N(prior_mean, prior_var I)`.
#[derive(Debug, Clone)]
pub struct LinearGaussianProblem {
    pub a: Array2<f64>,
    pub sigma_v: f64,
    pub prior_mean: Array1<f64>,
    pub prior_var: f64,
}

impl LinearGaussianProblem {
    pub fn new(
        a: Array2<f64>,
        sigma_v: f64,
        prior_mean: Array1<f64>,
        prior_var: f64,
    ) -> Result<Self> {
        if a.ncols() != prior_mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "A has {} columns, prior mean has {} entries",
                a.ncols(),
                prior_mean.len()
            )));
        }
        if !(sigma_v > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma_v must be positive, got {sigma_v}"
            )));
        }
        if !(prior_var > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "prior_var must be positive, got {prior_var}"
            )));
        }
        Ok(Self {
            a,
            sigma_v,
            prior_mean,
            prior_var,
        })
    }

    /// Posterior mode `(A^T A / sigma_v^2 + I / tau^2)^{-1} (A^T y / sigma_v^2
    /// + mean / tau^2)` via a dense symmetric positive-definite solve.
    pub fn analytic_map(&self, y: &Array1<f64>) -> Result<Array1<f64>> {
        if y.len() != self.a.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "y has {} entries, A has {} rows",
                y.len(),
                self.a.nrows()
            )));
        }
        let n = self.a.ncols();
        let inv_noise = 1.0 / (self.sigma_v * self.sigma_v);
        let inv_prior = 1.0 / self.prior_var;
        let mut system = self.a.t().dot(&self.a) * inv_noise;
        for i in 0..n {
            system[(i, i)] += inv_prior;
        }
        let rhs = self.a.t().dot(y) * inv_noise + &self.prior_mean * inv_prior;
        cholesky_solve(&system, &rhs)
    }

    /// The unique `lambda` for which the sampler's expected stationarity
    /// condition coincides with the MAP stationarity under the standard
    /// normal prior and the `lambda / SNR_t` weighting:
    /// `lambda* = 2 sigma_v^2 / mean_t(sigma_t^2)`.
    pub fn calibrated_lambda(&self, s: &NoiseSchedule) -> Result<f64> {
        if (self.prior_var - 1.0).abs() > 1e-12 || self.prior_mean.iter().any(|&m| m.abs() > 1e-12)
        {
            return Err(Error::InvalidParameter(
                "lambda calibration requires the standard normal prior".into(),
            ));
        }
        let t_max = s.t_max();
        let mean_sigma_sq: f64 =
            (1..=t_max).map(|t| s.sigma(t) * s.sigma(t)).sum::<f64>() / t_max as f64;
        Ok(2.0 * self.sigma_v * self.sigma_v / mean_sigma_sq)
    }
}

/// Dense Cholesky solve for symmetric positive-definite systems. Problem
/// sizes here are desk scale, so no factorization library is needed.
fn cholesky_solve(m: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = m.nrows();
    if m.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch("cholesky_solve shapes".into()));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::Numerical(format!(
                        "matrix not positive definite at pivot {i}"
                    )));
                }
                l[(i, j)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    // forward then backward substitution
    let mut z = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[(i, k)] * z[k];
        }
        z[i] = sum / l[(i, i)];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = z[i];
        for k in i + 1..n {
            sum -= l[(k, i)] * x[k];
        }
        x[i] = sum / l[(i, i)];
    }
    Ok(x)
}

/// Central-difference gradient of `fun` at `x` with step `h` per coordinate.
pub fn finite_diff_grad<F>(fun: F, x: &Array1<f64>, h: f64) -> Array1<f64>
where
    F: Fn(&Array1<f64>) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut g = Array1::zeros(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        g[i] = (fun(&xp) - fun(&xm)) / (2.0 * h);
    }
    g
}

/// Central difference of a scalar function of a scalar.
pub fn finite_diff_scalar<F>(fun: F, x: f64, h: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    assert!(h > 0.0);
    (fun(x + h) - fun(x - h)) / (2.0 * h)
}

pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

pub struct GridPosterior {
    pub points: Vec<f64>,
    pub density: Vec<f64>,
    /// Grid point with the highest posterior density.
    pub argmax: f64,
    pub cell: f64,
}

/// Brute-force 1-D posterior `p(x) * exp(-||y - f(x)||^2 / (2 sigma_v^2))`
/// evaluated on a uniform grid and normalized by the trapezoid rule.
pub fn grid_posterior_1d(
    prior: &GaussianMixturePrior,
    m: &Measurement,
    grid: &GridSpec,
) -> Result<GridPosterior> {
    let op = m.operator();
    if op.in_dim() != 1 {
        return Err(Error::DimensionMismatch(
            "grid posterior is for 1-D problems".into(),
        ));
    }
    if grid.n < 100 {
        return Err(Error::InvalidParameter(format!(
            "grid needs at least 100 points, got {}",
            grid.n
        )));
    }
    if !(grid.hi > grid.lo) {
        return Err(Error::InvalidParameter("grid needs hi > lo".into()));
    }
    let sigma_v = op.sigma_v().max(crate::sampler::SIGMA_V_FLOOR);
    let cell = (grid.hi - grid.lo) / (grid.n - 1) as f64;

    let log_prior = |x: f64| -> f64 {
        let mut best = f64::NEG_INFINITY;
        let mut terms = Vec::with_capacity(prior.n_components());
        for c in 0..prior.n_components() {
            let var = prior.variances()[c];
            let d = x - prior.means()[c][0];
            let l = prior.weights()[c].ln()
                - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
                - d * d / (2.0 * var);
            best = best.max(l);
            terms.push(l);
        }
        best + terms.iter().map(|&l| (l - best).exp()).sum::<f64>().ln()
    };

    let mut points = Vec::with_capacity(grid.n);
    let mut log_post = Vec::with_capacity(grid.n);
    let mut best = f64::NEG_INFINITY;
    for i in 0..grid.n {
        let x = grid.lo + cell * i as f64;
        let fx = op.apply(&Array1::from_elem(1, x));
        let d = &fx - m.y();
        let lp = log_prior(x) - d.dot(&d) / (2.0 * sigma_v * sigma_v);
        best = best.max(lp);
        points.push(x);
        log_post.push(lp);
    }
    if !best.is_finite() {
        return Err(Error::Numerical(
            "posterior underflowed on the whole grid".into(),
        ));
    }
    let mut density: Vec<f64> = log_post.iter().map(|&l| (l - best).exp()).collect();
    let mut mass = 0.0;
    for i in 1..grid.n {
        mass += 0.5 * (density[i - 1] + density[i]) * cell;
    }
    if mass <= 0.0 || !mass.is_finite() {
        return Err(Error::Numerical("zero posterior mass on the grid".into()));
    }
    for d in &mut density {
        *d /= mass;
    }
    let argmax_idx = density
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    Ok(GridPosterior {
        argmax: points[argmax_idx],
        points,
        density,
        cell,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::DenseLinear;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn scalar_map_is_equal_precision_average() {
        let p = LinearGaussianProblem::new(Array2::eye(1), 1.0, Array1::zeros(1), 1.0).unwrap();
        let mu = p.analytic_map(&array![2.0]).unwrap();
        assert!((mu[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_operator_returns_prior_mean() {
        let p =
            LinearGaussianProblem::new(Array2::zeros((3, 2)), 0.5, array![0.7, -0.2], 2.0).unwrap();
        let mu = p.analytic_map(&array![1.0, 2.0, 3.0]).unwrap();
        assert!((mu[0] - 0.7).abs() < 1e-14);
        assert!((mu[1] + 0.2).abs() < 1e-14);
    }

    #[test]
    fn map_satisfies_stationarity_on_random_problems() {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for _ in 0..5 {
            let a = Array2::from_shape_fn((6, 4), |_| rng.gen_range(-1.0..1.0));
            let prior_mean = Array1::from_iter((0..4).map(|_| rng.gen_range(-0.5..0.5)));
            let p = LinearGaussianProblem::new(a.clone(), 0.7, prior_mean.clone(), 1.3).unwrap();
            let y = Array1::from_iter((0..6).map(|_| rng.gen_range(-1.0..1.0)));
            let mu = p.analytic_map(&y).unwrap();
            // A^T (A mu - y) / sv^2 + (mu - mean) / tau^2 = 0
            let resid = a.t().dot(&(a.dot(&mu) - &y)) / (0.7 * 0.7) + (&mu - &prior_mean) / 1.3;
            assert!(resid.iter().all(|v| v.abs() < 1e-10), "residual {resid:?}");
        }
    }

    #[test]
    fn calibrated_lambda_examples() {
        // hypothetical schedule with sigma^2 = 1 everywhere gives lambda* = 2 sigma_v^2
        let s = NoiseSchedule::from_parts(vec![0.5; 4], vec![0.5; 4], vec![1.0; 4]).unwrap();
        let p = LinearGaussianProblem::new(Array2::eye(2), 1.0, Array1::zeros(2), 1.0).unwrap();
        assert!((p.calibrated_lambda(&s).unwrap() - 2.0).abs() < 1e-14);

        // paper schedule with sigma_v = 0.5: lambda* = 0.5 / mean(sigma_t^2),
        // the mean recomputed here by direct summation
        let paper = NoiseSchedule::linear(1e-4, 0.02, 1000).unwrap();
        let mut mean = 0.0;
        for t in 1..=1000 {
            mean += paper.sigma(t) * paper.sigma(t);
        }
        mean /= 1000.0;
        let p2 = LinearGaussianProblem::new(Array2::eye(2), 0.5, Array1::zeros(2), 1.0).unwrap();
        let got = p2.calibrated_lambda(&paper).unwrap();
        assert!((got - 0.5 / mean).abs() < 1e-14);
        // frozen reference for mean_t(sigma_t^2), from 50-digit arithmetic
        assert!((mean - 0.7244867666031937).abs() < 1e-12);

        // lambda* scales as sigma_v^2
        let p3 = LinearGaussianProblem::new(Array2::eye(2), 1.0, Array1::zeros(2), 1.0).unwrap();
        let ratio = p3.calibrated_lambda(&paper).unwrap() / p2.calibrated_lambda(&paper).unwrap();
        assert!((ratio - 4.0).abs() < 1e-12);

        // non-unit prior variance is rejected
        let bad = LinearGaussianProblem::new(Array2::eye(2), 1.0, Array1::zeros(2), 2.0).unwrap();
        assert!(bad.calibrated_lambda(&paper).is_err());
    }

    #[test]
    fn finite_difference_examples() {
        let g = finite_diff_grad(|x| x.dot(x), &array![1.0, 2.0], 1e-5);
        assert!((g[0] - 2.0).abs() < 1e-6);
        assert!((g[1] - 4.0).abs() < 1e-6);

        let c = array![0.3, -1.7, 0.9];
        let g = finite_diff_grad(|x| c.dot(x), &array![0.1, 0.2, 0.3], 1e-5);
        for i in 0..3 {
            assert!((g[i] - c[i]).abs() < 1e-9);
        }

        // matches the analytic gradient of a Gaussian log density
        let mean = array![0.5, -0.5];
        let var = 0.8;
        let x = array![1.1, 0.3];
        let logp = |v: &Array1<f64>| {
            let d = v - &mean;
            -d.dot(&d) / (2.0 * var)
        };
        let g = finite_diff_grad(logp, &x, 1e-5);
        let want = (&mean - &x) / var;
        for i in 0..2 {
            assert!((g[i] - want[i]).abs() / want[i].abs() < 1e-6);
        }
    }

    #[test]
    fn grid_posterior_matches_analytic_map_for_gaussian_prior() {
        let prior = GaussianMixturePrior::new(vec![1.0], vec![array![0.0]], vec![1.0]).unwrap();
        let op = DenseLinear::new(Array2::from_elem((1, 1), 1.0), 1.0).unwrap();
        let m = Measurement::new(array![2.0], &op).unwrap();
        let grid = GridSpec {
            lo: -4.0,
            hi: 4.0,
            n: 2001,
        };
        let post = grid_posterior_1d(&prior, &m, &grid).unwrap();
        let problem =
            LinearGaussianProblem::new(Array2::from_elem((1, 1), 1.0), 1.0, Array1::zeros(1), 1.0)
                .unwrap();
        let map = problem.analytic_map(&array![2.0]).unwrap();
        assert!(
            (post.argmax - map[0]).abs() <= post.cell,
            "argmax {} vs map {}",
            post.argmax,
            map[0]
        );
    }

    #[test]
    fn grid_posterior_symmetry_and_normalization() {
        let prior = GaussianMixturePrior::new(
            vec![0.5, 0.5],
            vec![array![1.0], array![-1.0]],
            vec![0.2, 0.2],
        )
        .unwrap();
        // sigma_v huge: observation is uninformative, posterior stays symmetric
        let op = DenseLinear::new(Array2::from_elem((1, 1), 1.0), 1e6).unwrap();
        let m = Measurement::new(array![0.3], &op).unwrap();
        let grid = GridSpec {
            lo: -3.0,
            hi: 3.0,
            n: 1201,
        };
        let post = grid_posterior_1d(&prior, &m, &grid).unwrap();
        let n = post.points.len();
        for i in 0..n {
            let mirrored = post.density[n - 1 - i];
            assert!(
                (post.density[i] - mirrored).abs() < 1e-8,
                "asymmetry at {i}"
            );
        }
        // density re-integrates to 1
        let mut mass = 0.0;
        for i in 1..n {
            mass += 0.5 * (post.density[i - 1] + post.density[i]) * post.cell;
        }
        assert!((mass - 1.0).abs() < 1e-10, "mass {mass}");
    }

    #[test]
    fn grid_posterior_rejections() {
        let prior = GaussianMixturePrior::new(vec![1.0], vec![array![0.0]], vec![1.0]).unwrap();
        let op = DenseLinear::new(Array2::from_elem((1, 1), 1.0), 1.0).unwrap();
        let m = Measurement::new(array![0.0], &op).unwrap();
        assert!(grid_posterior_1d(
            &prior,
            &m,
            &GridSpec {
                lo: -1.0,
                hi: 1.0,
                n: 50
            }
        )
        .is_err());
        assert!(grid_posterior_1d(
            &prior,
            &m,
            &GridSpec {
                lo: 1.0,
                hi: -1.0,
                n: 200
            }
        )
        .is_err());
    }

    #[test]
    fn problem_construction_rejections() {
        assert!(LinearGaussianProblem::new(Array2::eye(2), 0.0, Array1::zeros(2), 1.0).is_err());
        assert!(LinearGaussianProblem::new(Array2::eye(2), 1.0, Array1::zeros(3), 1.0).is_err());
        assert!(LinearGaussianProblem::new(Array2::eye(2), 1.0, Array1::zeros(2), -1.0).is_err());
    }
}

//! Executes one configured experiment: synthesize the problem, run the
//! sampler, persist trace/outputs/metrics.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use reddiff::metrics::MetricReport;
use reddiff::operators::{ForwardOperator, Measurement};
use reddiff::oracle::LinearGaussianProblem;
use reddiff::priors::randn;
use reddiff::sampler::{self, RunTrace};

use crate::config::{
    build_operator, build_optimizer, build_plan, build_prior, build_schedule, build_weighting,
    image_shape, operator_is_linear, parse_config, BuiltPrior, ExperimentConfig, ImageFormatCfg,
    MethodCfg, PriorCfg, TruthCfg,
};
use crate::io::{read_tensor, write_pgm, write_ppm, write_tensor};

/// Stream offset for measurement noise when the truth comes from a file, so
/// the observation stays a pure function of the sampler seed.
const MEASUREMENT_NOISE_STREAM: u64 = 0x9e3779b97f4a7c15;

#[derive(Debug, Default, Clone)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct MetricsJson {
    pub mse: f64,
    /// `null` encodes the infinite-PSNR sentinel for exact equality.
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub method: String,
    pub seed: u64,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub final_recon: Option<f64>,
    pub sigma_q_final: Option<f64>,
    pub metrics_vs_truth: MetricsJson,
    pub metrics_vs_map: Option<MetricsJson>,
    /// Relative L2 distance to the analytic MAP, when it exists.
    pub map_gap_rel: Option<f64>,
}

#[derive(Debug)]
pub struct RunOutputs {
    pub directory: PathBuf,
    pub summary: Summary,
}

/// Runs the experiment described by the config file. Returns the output
/// directory. Identical config bytes and seed produce byte-identical outputs.
pub fn run(config_path: &Path, overrides: &RunOverrides) -> Result<RunOutputs> {
    let bytes =
        fs::read(config_path).with_context(|| format!("reading {}", config_path.display()))?;
    let mut config = parse_config(&bytes, config_path)?;
    if let Some(seed) = overrides.seed {
        config.sampler.seed = seed;
    }
    let out_dir = overrides
        .out_dir
        .clone()
        .or_else(|| std::env::var_os("REDDIFF_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| config.output.directory.clone());
    let base_dir = config_path.parent().unwrap_or(Path::new("."));
    execute(&config, &bytes, base_dir, &out_dir)
}

/// Runs an already-parsed config; `snapshot` is copied verbatim into the
/// output directory as `config.json`.
pub fn execute(
    config: &ExperimentConfig,
    snapshot: &[u8],
    base_dir: &Path,
    out_dir: &Path,
) -> Result<RunOutputs> {
    let schedule = build_schedule(&config.schedule)?;
    let prior = build_prior(&config.prior)?;
    let operator = build_operator(&config.operator, base_dir)?;
    if prior.dim() != operator.in_dim() {
        bail!(
            "prior dimension {} does not match operator input {}",
            prior.dim(),
            operator.in_dim()
        );
    }

    let x0 = synthesize_truth(config, &prior, base_dir)?;
    let y = observe(config, operator.as_ref(), &x0);
    let m = Measurement::new(y.clone(), operator.as_ref())?;

    let weighting = build_weighting(&config.sampler.weighting)?;
    let optimizer = build_optimizer(&config.sampler.optimizer)?;
    let plan = build_plan(&config.sampler.plan, optimizer.steps)?;
    let seed = config.sampler.seed;

    let (mu, trace, sigma_q_final) = match config.sampler.method {
        MethodCfg::Reddiff => {
            let out = sampler::sample(
                &m,
                prior.as_score(),
                &schedule,
                &weighting,
                &plan,
                &optimizer,
                seed,
            )?;
            (out.mu, out.trace, None)
        }
        MethodCfg::ReddiffDispersion => {
            let out = sampler::sample_with_dispersion(
                &m,
                prior.as_score(),
                &schedule,
                &weighting,
                &plan,
                &optimizer,
                seed,
                config.sampler.sigma_init,
            )?;
            (out.mu, out.trace, Some(out.sigma_q))
        }
        MethodCfg::Dps => {
            let mu = sampler::dps_baseline_sample(
                &m,
                prior.as_score(),
                &schedule,
                optimizer.steps,
                config.sampler.zeta_scale,
                seed,
            )?;
            (mu, RunTrace::default(), None)
        }
    };

    let shape = image_shape(&config.operator);
    let peak = config.output.peak();
    let metrics_vs_truth = report(&mu, &x0, peak, shape)?;

    let map = analytic_map_if_available(config, operator.as_ref(), &y)?;
    let (metrics_vs_map, map_gap_rel) = match &map {
        Some(map) => {
            let metrics = report(&mu, map, peak, shape)?;
            let gap = (&mu - map).mapv(|v| v * v).sum().sqrt() / map.dot(map).sqrt().max(1e-300);
            (Some(metrics), Some(gap))
        }
        None => (None, None),
    };

    let summary = Summary {
        method: match config.sampler.method {
            MethodCfg::Reddiff => "reddiff",
            MethodCfg::ReddiffDispersion => "reddiff_dispersion",
            MethodCfg::Dps => "dps",
        }
        .to_string(),
        seed,
        steps: optimizer.steps,
        final_loss: trace.last().map(|r| r.loss),
        final_recon: trace.last().map(|r| r.recon),
        sigma_q_final,
        metrics_vs_truth,
        metrics_vs_map,
        map_gap_rel,
    };

    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out_dir.join("config.json"), snapshot)?;
    fs::write(out_dir.join("trace.csv"), trace.to_csv())?;
    write_tensor(
        &out_dir.join("mu.bin"),
        &out_dir.join("mu.json"),
        mu.as_slice().expect("contiguous"),
        &tensor_shape(&mu, shape),
    )?;
    let summary_json = serde_json::to_string_pretty(&summary)?;
    fs::write(out_dir.join("summary.json"), summary_json + "\n")?;

    if config.output.emit_images {
        let (h, w) = shape.ok_or_else(|| {
            anyhow::anyhow!("emit_images requires an operator with an image shape")
        })?;
        let [lo, hi] = config.output.range;
        match config.output.image_format {
            ImageFormatCfg::Pgm => {
                write_pgm(
                    &out_dir.join("x0.pgm"),
                    x0.as_slice().unwrap(),
                    h,
                    w,
                    lo,
                    hi,
                )?;
                write_pgm(
                    &out_dir.join("mu.pgm"),
                    mu.as_slice().unwrap(),
                    h,
                    w,
                    lo,
                    hi,
                )?;
            }
            ImageFormatCfg::Ppm => {
                write_ppm(
                    &out_dir.join("x0.ppm"),
                    x0.as_slice().unwrap(),
                    h,
                    w,
                    lo,
                    hi,
                )?;
                write_ppm(
                    &out_dir.join("mu.ppm"),
                    mu.as_slice().unwrap(),
                    h,
                    w,
                    lo,
                    hi,
                )?;
            }
        }
    }

    Ok(RunOutputs {
        directory: out_dir.to_path_buf(),
        summary,
    })
}

fn synthesize_truth(
    config: &ExperimentConfig,
    prior: &BuiltPrior,
    base_dir: &Path,
) -> Result<Array1<f64>> {
    match &config.truth_source {
        TruthCfg::Synthetic { seed } => {
            let mut rng = ChaCha20Rng::seed_from_u64(*seed);
            Ok(prior.sample(&mut rng))
        }
        TruthCfg::TensorFile { path } => {
            let path = if path.is_absolute() {
                path.clone()
            } else {
                base_dir.join(path)
            };
            let data = read_tensor(&path)?;
            if data.len() != prior.dim() {
                bail!(
                    "truth tensor has {} entries, problem dimension is {}",
                    data.len(),
                    prior.dim()
                );
            }
            Ok(Array1::from_vec(data))
        }
    }
}

fn observe(config: &ExperimentConfig, op: &dyn ForwardOperator, x0: &Array1<f64>) -> Array1<f64> {
    let clean = op.apply(x0);
    if op.sigma_v() == 0.0 {
        return clean;
    }
    let noise_seed = match &config.truth_source {
        TruthCfg::Synthetic { seed } => seed.wrapping_add(MEASUREMENT_NOISE_STREAM),
        TruthCfg::TensorFile { .. } => config.sampler.seed.wrapping_add(MEASUREMENT_NOISE_STREAM),
    };
    let mut rng = ChaCha20Rng::seed_from_u64(noise_seed);
    let noise = randn(clean.len(), &mut rng);
    clean + op.sigma_v() * noise
}

fn report(
    x: &Array1<f64>,
    reference: &Array1<f64>,
    peak: f64,
    shape: Option<(usize, usize)>,
) -> Result<MetricsJson> {
    let report = MetricReport::compute(x, reference, peak, shape)?;
    Ok(MetricsJson {
        mse: report.mse,
        psnr_db: report.psnr_db.is_finite().then_some(report.psnr_db),
        ssim: report.ssim,
    })
}

/// Materializes the operator matrix column by column and solves for the MAP
/// when the problem is linear-Gaussian.
fn analytic_map_if_available(
    config: &ExperimentConfig,
    op: &dyn ForwardOperator,
    y: &Array1<f64>,
) -> Result<Option<Array1<f64>>> {
    if !operator_is_linear(&config.operator) || op.in_dim() > 4096 {
        return Ok(None);
    }
    let PriorCfg::Gaussian { mean, variance } = &config.prior else {
        return Ok(None);
    };
    let n = op.in_dim();
    let mut a = Array2::zeros((op.out_dim(), n));
    for j in 0..n {
        let mut e = Array1::zeros(n);
        e[j] = 1.0;
        let col = op.apply(&e);
        for i in 0..op.out_dim() {
            a[(i, j)] = col[i];
        }
    }
    let problem = LinearGaussianProblem::new(
        a,
        op.sigma_v().max(sampler::SIGMA_V_FLOOR),
        Array1::from_vec(mean.clone()),
        *variance,
    )?;
    Ok(Some(problem.analytic_map(y)?))
}

fn tensor_shape(mu: &Array1<f64>, shape: Option<(usize, usize)>) -> Vec<usize> {
    match shape {
        Some((h, w)) if h * w == mu.len() => vec![h, w],
        _ => vec![mu.len()],
    }
}

//! Experiment configuration: a single JSON document describing the schedule,
//! prior, operator, truth source, sampler, and outputs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use reddiff::operators::{
    BlockAverageDownsample, DenseLinear, DftMagnitude, ForwardOperator, GaussianBlur, HdrClip,
    InpaintingMask,
};
use reddiff::priors::{GaussianMixturePrior, GaussianPrior, ScorePrior};
use reddiff::sampler::{
    OptimizerConfig, OptimizerKind, PlanKind, TimestepPlan, WeightKind, WeightSchedule,
};
use reddiff::schedule::NoiseSchedule;

use crate::io::read_mask_file;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schedule: ScheduleCfg,
    pub prior: PriorCfg,
    pub operator: OperatorCfg,
    pub truth_source: TruthCfg,
    pub sampler: SamplerCfg,
    pub output: OutputCfg,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleCfg {
    pub beta_min: f64,
    pub beta_max: f64,
    #[serde(rename = "T")]
    pub t: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorCfg {
    Gaussian {
        mean: Vec<f64>,
        variance: f64,
    },
    Gmm {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorCfg {
    Inpainting {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mask: Option<Vec<bool>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mask_file: Option<PathBuf>,
        sigma_v: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        height: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width: Option<usize>,
    },
    Downsample {
        height: usize,
        width: usize,
        factor: usize,
        sigma_v: f64,
    },
    Blur {
        height: usize,
        width: usize,
        kernel_std: f64,
        kernel_size: usize,
        sigma_v: f64,
    },
    Hdr {
        dim: usize,
        sigma_v: f64,
    },
    DftMagnitude {
        dim: usize,
        #[serde(default = "default_oversample")]
        oversample: usize,
        sigma_v: f64,
    },
    DenseLinear {
        matrix: Vec<Vec<f64>>,
        sigma_v: f64,
    },
}

fn default_oversample() -> usize {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthCfg {
    /// Draw the ground truth from the prior with its own seed.
    Synthetic { seed: u64 },
    /// Load the ground truth from a raw little-endian f64 tensor file.
    TensorFile { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodCfg {
    Reddiff,
    ReddiffDispersion,
    Dps,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerCfg {
    pub method: MethodCfg,
    pub weighting: WeightCfg,
    pub plan: PlanCfg,
    pub optimizer: OptCfg,
    pub seed: u64,
    /// Initial dispersion for `reddiff_dispersion`.
    #[serde(default)]
    pub sigma_init: f64,
    /// Guidance scale for `dps`.
    #[serde(default = "default_zeta")]
    pub zeta_scale: f64,
}

fn default_zeta() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightCfg {
    Constant {
        lambda: f64,
    },
    InvSnrPower {
        p: f64,
        lambda: f64,
    },
    MaxLikelihood {
        omega_prime: Vec<f64>,
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
}

fn default_lambda() -> f64 {
    0.25
}

impl WeightCfg {
    pub fn lambda(&self) -> f64 {
        match self {
            WeightCfg::Constant { lambda }
            | WeightCfg::InvSnrPower { lambda, .. }
            | WeightCfg::MaxLikelihood { lambda, .. } => *lambda,
        }
    }

    pub fn set_lambda(&mut self, value: f64) {
        match self {
            WeightCfg::Constant { lambda }
            | WeightCfg::InvSnrPower { lambda, .. }
            | WeightCfg::MaxLikelihood { lambda, .. } => *lambda = value,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlanCfg {
    Descending,
    Ascending,
    Random,
    MinibatchRandom { batch: usize },
    MinibatchDescending { batch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptKindCfg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptCfg {
    pub kind: OptKindCfg,
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub steps: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps_hat")]
    pub eps_hat: f64,
    #[serde(default)]
    pub momentum: f64,
}

fn default_lr() -> f64 {
    0.1
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.99
}
fn default_eps_hat() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageFormatCfg {
    Pgm,
    Ppm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputCfg {
    pub directory: PathBuf,
    #[serde(default)]
    pub emit_images: bool,
    #[serde(default = "default_image_format")]
    pub image_format: ImageFormatCfg,
    /// Declared value range of the signal; the metric peak is `hi - lo`.
    #[serde(default = "default_range")]
    pub range: [f64; 2],
}

fn default_image_format() -> ImageFormatCfg {
    ImageFormatCfg::Pgm
}

fn default_range() -> [f64; 2] {
    [0.0, 1.0]
}

impl OutputCfg {
    pub fn peak(&self) -> f64 {
        self.range[1] - self.range[0]
    }
}

/// A prior built from config, kept concrete so it can synthesize data and
/// feed the grid oracle.
pub enum BuiltPrior {
    Gaussian(GaussianPrior),
    Gmm(GaussianMixturePrior),
}

impl BuiltPrior {
    pub fn as_score(&self) -> &dyn ScorePrior {
        match self {
            BuiltPrior::Gaussian(p) => p,
            BuiltPrior::Gmm(p) => p,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BuiltPrior::Gaussian(p) => p.dim(),
            BuiltPrior::Gmm(p) => p.dim(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64> {
        match self {
            BuiltPrior::Gaussian(p) => p.sample(rng),
            BuiltPrior::Gmm(p) => p.sample(rng),
        }
    }
}

pub fn parse_config(bytes: &[u8], origin: &Path) -> Result<ExperimentConfig> {
    // serde_json errors carry line/column diagnostics
    serde_json::from_slice(bytes)
        .with_context(|| format!("failed to parse config {}", origin.display()))
}

pub fn build_schedule(cfg: &ScheduleCfg) -> Result<NoiseSchedule> {
    Ok(NoiseSchedule::linear(cfg.beta_min, cfg.beta_max, cfg.t)?)
}

pub fn build_prior(cfg: &PriorCfg) -> Result<BuiltPrior> {
    match cfg {
        PriorCfg::Gaussian { mean, variance } => Ok(BuiltPrior::Gaussian(GaussianPrior::new(
            Array1::from_vec(mean.clone()),
            *variance,
        )?)),
        PriorCfg::Gmm {
            weights,
            means,
            variances,
        } => {
            let means = means
                .iter()
                .map(|m| Array1::from_vec(m.clone()))
                .collect::<Vec<_>>();
            Ok(BuiltPrior::Gmm(GaussianMixturePrior::new(
                weights.clone(),
                means,
                variances.clone(),
            )?))
        }
    }
}

/// Builds the measurement operator; `base_dir` anchors relative file paths.
pub fn build_operator(cfg: &OperatorCfg, base_dir: &Path) -> Result<Box<dyn ForwardOperator>> {
    match cfg {
        OperatorCfg::Inpainting {
            mask,
            mask_file,
            sigma_v,
            ..
        } => {
            let mask = match (mask, mask_file) {
                (Some(m), None) => m.clone(),
                (None, Some(f)) => {
                    let path = if f.is_absolute() {
                        f.clone()
                    } else {
                        base_dir.join(f)
                    };
                    read_mask_file(&path)?
                }
                _ => bail!("inpainting needs exactly one of `mask` or `mask_file`"),
            };
            Ok(Box::new(InpaintingMask::new(mask, *sigma_v)?))
        }
        OperatorCfg::Downsample {
            height,
            width,
            factor,
            sigma_v,
        } => Ok(Box::new(BlockAverageDownsample::new(
            *height, *width, *factor, *sigma_v,
        )?)),
        OperatorCfg::Blur {
            height,
            width,
            kernel_std,
            kernel_size,
            sigma_v,
        } => Ok(Box::new(GaussianBlur::new(
            *height,
            *width,
            *kernel_std,
            *kernel_size,
            *sigma_v,
        )?)),
        OperatorCfg::Hdr { dim, sigma_v } => Ok(Box::new(HdrClip::new(*dim, *sigma_v)?)),
        OperatorCfg::DftMagnitude {
            dim,
            oversample,
            sigma_v,
        } => Ok(Box::new(DftMagnitude::new(*dim, *oversample, *sigma_v)?)),
        OperatorCfg::DenseLinear { matrix, sigma_v } => {
            let rows = matrix.len();
            if rows == 0 {
                bail!("dense_linear matrix is empty");
            }
            let cols = matrix[0].len();
            if matrix.iter().any(|r| r.len() != cols) {
                bail!("dense_linear matrix rows have unequal lengths");
            }
            let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
            let a = Array2::from_shape_vec((rows, cols), flat)?;
            Ok(Box::new(DenseLinear::new(a, *sigma_v)?))
        }
    }
}

/// Image shape of the state, when the operator implies one.
pub fn image_shape(cfg: &OperatorCfg) -> Option<(usize, usize)> {
    match cfg {
        OperatorCfg::Inpainting { height, width, .. } => height.zip(*width),
        OperatorCfg::Downsample { height, width, .. } | OperatorCfg::Blur { height, width, .. } => {
            Some((*height, *width))
        }
        _ => None,
    }
}

/// Whether the operator is linear, which makes the analytic MAP available
/// for Gaussian priors.
pub fn operator_is_linear(cfg: &OperatorCfg) -> bool {
    matches!(
        cfg,
        OperatorCfg::Inpainting { .. }
            | OperatorCfg::Downsample { .. }
            | OperatorCfg::Blur { .. }
            | OperatorCfg::DenseLinear { .. }
    )
}

pub fn build_weighting(cfg: &WeightCfg) -> Result<WeightSchedule> {
    let w = match cfg {
        WeightCfg::Constant { lambda } => WeightSchedule::new(WeightKind::Constant, *lambda)?,
        WeightCfg::InvSnrPower { p, lambda } => {
            WeightSchedule::new(WeightKind::InvSnrPower(*p), *lambda)?
        }
        WeightCfg::MaxLikelihood {
            omega_prime,
            lambda,
        } => WeightSchedule::new(WeightKind::MaxLikelihood(omega_prime.clone()), *lambda)?,
    };
    Ok(w)
}

pub fn build_plan(cfg: &PlanCfg, steps: usize) -> Result<TimestepPlan> {
    let kind = match cfg {
        PlanCfg::Descending => PlanKind::Descending,
        PlanCfg::Ascending => PlanKind::Ascending,
        PlanCfg::Random => PlanKind::Random,
        PlanCfg::MinibatchRandom { batch } => PlanKind::MinibatchRandom { batch: *batch },
        PlanCfg::MinibatchDescending { batch } => PlanKind::MinibatchDescending { batch: *batch },
    };
    Ok(TimestepPlan::new(kind, steps)?)
}

pub fn build_optimizer(cfg: &OptCfg) -> Result<OptimizerConfig> {
    let kind = match cfg.kind {
        OptKindCfg::Adam => OptimizerKind::Adam {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps_hat: cfg.eps_hat,
        },
        OptKindCfg::Sgd => OptimizerKind::Sgd {
            momentum: cfg.momentum,
        },
    };
    let opt = OptimizerConfig {
        kind,
        lr: cfg.lr,
        steps: cfg.steps,
    };
    opt.validate()?;
    Ok(opt)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schedule": { "beta_min": 0.0001, "beta_max": 0.02, "T": 100 },
        "prior": { "kind": "gaussian", "mean": [0.0, 0.0], "variance": 1.0 },
        "operator": { "kind": "hdr", "dim": 2, "sigma_v": 0.05 },
        "truth_source": { "kind": "synthetic", "seed": 7 },
        "sampler": {
            "method": "reddiff",
            "weighting": { "kind": "inv_snr_power", "p": 1.0, "lambda": 0.25 },
            "plan": { "kind": "descending" },
            "optimizer": { "kind": "adam", "steps": 50 },
            "seed": 0
        },
        "output": { "directory": "out" }
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = parse_config(MINIMAL.as_bytes(), Path::new("test.json")).unwrap();
        assert_eq!(cfg.sampler.optimizer.lr, 0.1);
        assert_eq!(cfg.sampler.optimizer.beta1, 0.9);
        assert_eq!(cfg.sampler.optimizer.beta2, 0.99);
        assert_eq!(cfg.sampler.zeta_scale, 0.1);
        assert_eq!(cfg.output.peak(), 1.0);
        assert!(!cfg.output.emit_images);
        build_schedule(&cfg.schedule).unwrap();
        build_prior(&cfg.prior).unwrap();
        build_operator(&cfg.operator, Path::new(".")).unwrap();
    }

    #[test]
    fn parse_error_reports_line_and_column() {
        let broken = MINIMAL.replace("\"variance\": 1.0", "\"variance\": oops");
        let err = parse_config(broken.as_bytes(), Path::new("broken.json"))
            .unwrap_err()
            .root_cause()
            .to_string();
        assert!(err.contains("line"), "no line diagnostic in: {err}");
        assert!(err.contains("column"), "no column diagnostic in: {err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let extra = MINIMAL.replace("\"seed\": 0", "\"seed\": 0, \"typo_field\": 1");
        assert!(parse_config(extra.as_bytes(), Path::new("x.json")).is_err());
    }

    #[test]
    fn inpainting_requires_exactly_one_mask_source() {
        let cfg = OperatorCfg::Inpainting {
            mask: None,
            mask_file: None,
            sigma_v: 0.1,
            height: None,
            width: None,
        };
        assert!(build_operator(&cfg, Path::new(".")).is_err());
    }

    #[test]
    fn shapes_and_linearity() {
        let cfg = parse_config(MINIMAL.as_bytes(), Path::new("t.json")).unwrap();
        assert!(image_shape(&cfg.operator).is_none());
        assert!(!operator_is_linear(&cfg.operator));
        let down = OperatorCfg::Downsample {
            height: 4,
            width: 6,
            factor: 2,
            sigma_v: 0.0,
        };
        assert_eq!(image_shape(&down), Some((4, 6)));
        assert!(operator_is_linear(&down));
    }
}

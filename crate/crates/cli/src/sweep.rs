//! Grid sweeps over one sampler parameter, one run directory per value plus
//! an aggregate CSV.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::config::{parse_config, ExperimentConfig, PlanCfg, WeightCfg};
use crate::runner::execute;

const PARAMS: [&str; 5] = ["lambda", "lr", "steps", "weighting", "plan"];

pub struct SweepOutputs {
    pub directory: PathBuf,
    pub csv_path: PathBuf,
}

pub fn sweep(config_path: &Path, param: &str, values: &str) -> Result<SweepOutputs> {
    if !PARAMS.contains(&param) {
        bail!("unknown sweep parameter {param:?}; expected one of {PARAMS:?}");
    }
    let values: Vec<&str> = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }

    let bytes =
        fs::read(config_path).with_context(|| format!("reading {}", config_path.display()))?;
    let base_config = parse_config(&bytes, config_path)?;
    let base_dir = config_path.parent().unwrap_or(Path::new("."));
    let root = base_config.output.directory.join(format!("sweep_{param}"));
    fs::create_dir_all(&root)?;

    let mut rows = Vec::new();
    for value in &values {
        let mut config = base_config.clone();
        apply(&mut config, param, value).with_context(|| format!("applying {param}={value}"))?;
        let run_dir = root.join(sanitize(value));
        config.output.directory = run_dir.clone();
        // snapshot the modified config so each run directory is self-describing
        let snapshot = serde_json::to_string_pretty(&config)? + "\n";
        let out = execute(&config, snapshot.as_bytes(), base_dir, &run_dir)?;
        rows.push((
            value.to_string(),
            out.summary.final_loss,
            out.summary.metrics_vs_truth.psnr_db,
            out.summary.map_gap_rel,
        ));
    }

    let mut csv = String::from("value,final_loss,psnr,map_gap\n");
    for (value, loss, psnr, gap) in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            value,
            fmt_opt(*loss),
            fmt_opt(*psnr),
            fmt_opt(*gap)
        ));
    }
    let csv_path = root.join("sweep.csv");
    fs::write(&csv_path, csv)?;
    Ok(SweepOutputs {
        directory: root,
        csv_path,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v}"),
        None => "nan".to_string(),
    }
}

fn sanitize(value: &str) -> String {
    value
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn apply(config: &mut ExperimentConfig, param: &str, value: &str) -> Result<()> {
    match param {
        "lambda" => {
            let v: f64 = value.parse()?;
            config.sampler.weighting.set_lambda(v);
        }
        "lr" => {
            config.sampler.optimizer.lr = value.parse()?;
        }
        "steps" => {
            config.sampler.optimizer.steps = value.parse()?;
        }
        "weighting" => {
            let lambda = config.sampler.weighting.lambda();
            config.sampler.weighting = if value == "constant" {
                WeightCfg::Constant { lambda }
            } else {
                let p: f64 = value.parse().with_context(|| {
                    format!("weighting value {value:?} is neither `constant` nor a power")
                })?;
                WeightCfg::InvSnrPower { p, lambda }
            };
        }
        "plan" => {
            config.sampler.plan = parse_plan(value)?;
        }
        _ => unreachable!("validated above"),
    }
    Ok(())
}

fn parse_plan(value: &str) -> Result<PlanCfg> {
    let (kind, batch) = match value.split_once(':') {
        Some((k, b)) => (k, Some(b.parse::<usize>()?)),
        None => (value, None),
    };
    Ok(match (kind, batch) {
        ("descending", None) => PlanCfg::Descending,
        ("ascending", None) => PlanCfg::Ascending,
        ("random", None) => PlanCfg::Random,
        ("minibatch_random", Some(batch)) => PlanCfg::MinibatchRandom { batch },
        ("minibatch_descending", Some(batch)) => PlanCfg::MinibatchDescending { batch },
        _ => bail!("unknown plan {value:?}; use e.g. descending or minibatch_random:25"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_values_parse() {
        assert!(matches!(parse_plan("descending"), Ok(PlanCfg::Descending)));
        assert!(matches!(
            parse_plan("minibatch_random:25"),
            Ok(PlanCfg::MinibatchRandom { batch: 25 })
        ));
        assert!(parse_plan("sideways").is_err());
        assert!(parse_plan("minibatch_random").is_err());
    }

    #[test]
    fn sanitize_keeps_filenames_tame() {
        assert_eq!(sanitize("0.5"), "0.5");
        assert_eq!(sanitize("minibatch_random:25"), "minibatch_random_25");
    }
}

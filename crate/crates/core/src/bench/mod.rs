//! Metrics, the mapping loop, and the multi-run harnesses built on it.

mod config;
mod metrics;
mod runner;
mod summary;

use std::fs;
use std::path::Path;

pub use config::{BenchSection, EnvConfig, ExperimentConfig, ExperimentSection, Mode, OverfitSection, SweepSection};
pub use metrics::{compute_metrics, MetricRecord, Metrics, METRICS_HEADER, METRIC_NAMES, VARIANCE_FLOOR};
pub use runner::{
    grid_csv, metrics_csv, overfit_csv, run_jobs, run_mapping, run_overfit, samples_csv, write_overfit, write_run,
    GridMaps, OverfitRecord, RunJob, RunOutput, OVERFIT_HEADER,
};
pub use summary::{
    interpolate, metric_index, parse_metrics_csv, summarize_files, summarize_runs, summary_csv, CurveSummary,
    SUMMARY_HEADER,
};

use crate::error::{Error, Result};
use crate::kernels::VariantKind;

pub const SWEEP_PARAMETERS: [&str; 4] = ["num_bases", "hidden", "lmin", "lmax"];

fn jobs_for(label: &str, cfg: &ExperimentConfig) -> Vec<RunJob> {
    cfg.seed_list()
        .into_iter()
        .map(|seed| RunJob {
            label: label.to_string(),
            config: cfg.clone(),
            seed,
        })
        .collect()
}

/// Runs every `(label, config)` group over its seeds and summarizes each
/// group. Results keep the input order.
pub fn run_groups(
    groups: &[(String, ExperimentConfig)],
    out_dir: Option<&Path>,
    summary_name: &str,
) -> Result<Vec<(CurveSummary, Vec<RunOutput>)>> {
    for (_, cfg) in groups {
        cfg.validate()?;
    }
    let jobs: Vec<RunJob> = groups.iter().flat_map(|(l, c)| jobs_for(l, c)).collect();
    let mut outputs = run_jobs(&jobs, out_dir)?.into_iter();
    let mut result = Vec::with_capacity(groups.len());
    for (label, cfg) in groups {
        let runs: Vec<RunOutput> = outputs.by_ref().take(cfg.experiment.seeds).collect();
        let curves: Vec<Vec<MetricRecord>> = runs.iter().map(|r| r.records.clone()).collect();
        result.push((summarize_runs(label, &curves)?, runs));
    }
    if let Some(dir) = out_dir {
        let summaries: Vec<CurveSummary> = result.iter().map(|(s, _)| s.clone()).collect();
        let path = dir.join(summary_name);
        fs::write(&path, summary_csv(&summaries)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(result)
}

fn format_value(parameter: &str, v: f64) -> Result<String> {
    match parameter {
        "num_bases" | "hidden" => {
            if v.fract() != 0.0 || v < 1.0 {
                return Err(Error::Config(format!("{parameter} needs a positive integer, got {v}")));
            }
            Ok(format!("{}", v as u64))
        }
        _ => Ok(format!("{v:?}")),
    }
}

/// One group per swept value of a kernel parameter.
pub fn sweep_groups(base: &ExperimentConfig) -> Result<Vec<(String, ExperimentConfig)>> {
    let p = base.sweep.parameter.as_str();
    if !SWEEP_PARAMETERS.contains(&p) {
        return Err(Error::UnknownKind {
            what: "sweep parameter",
            name: p.to_string(),
        });
    }
    if base.sweep.values.is_empty() {
        return Err(Error::Config("sweep.values is empty".into()));
    }
    base.sweep
        .values
        .iter()
        .map(|&v| {
            let text = format_value(p, v)?;
            let mut cfg = base.clone();
            cfg.set(&format!("kernel.{p}={text}"))?;
            Ok((format!("{p}={text}"), cfg))
        })
        .collect()
}

pub fn run_sweep(base: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Vec<CurveSummary>> {
    let groups = sweep_groups(base)?;
    Ok(run_groups(&groups, out_dir, "sweep.csv")?.into_iter().map(|(s, _)| s).collect())
}

/// One group per attentive-kernel variant, all sharing the seed list.
pub fn ablation_groups(base: &ExperimentConfig) -> Result<Vec<(String, ExperimentConfig)>> {
    if base.kernel.name != "ak" {
        return Err(Error::Config(format!(
            "ablation needs kernel.name = \"ak\", got `{}`",
            base.kernel.name
        )));
    }
    Ok(VariantKind::ALL
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            cfg.kernel.variant = v;
            (v.label().to_string(), cfg)
        })
        .collect())
}

pub fn run_ablation(base: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Vec<CurveSummary>> {
    let groups = ablation_groups(base)?;
    Ok(run_groups(&groups, out_dir, "ablation.csv")?.into_iter().map(|(s, _)| s).collect())
}

/// Kernel × strategy matrix from the `[bench]` section.
pub fn bench_groups(base: &ExperimentConfig) -> Result<Vec<(String, ExperimentConfig)>> {
    let b = &base.bench;
    if b.kernels.is_empty() || b.strategies.is_empty() {
        return Err(Error::Config("bench needs at least one kernel and one strategy".into()));
    }
    let mut groups = Vec::new();
    for strategy in &b.strategies {
        for kernel in &b.kernels {
            let mut cfg = base.clone();
            cfg.kernel.name = kernel.clone();
            cfg.strategy.name = strategy.clone();
            groups.push((format!("{kernel}-{strategy}"), cfg));
        }
    }
    Ok(groups)
}

pub fn run_bench(base: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Vec<CurveSummary>> {
    let groups = bench_groups(base)?;
    Ok(run_groups(&groups, out_dir, "bench.csv")?.into_iter().map(|(s, _)| s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_labels_and_values() {
        let mut cfg = ExperimentConfig::default();
        cfg.sweep.values = vec![2.0, 5.0];
        let g = sweep_groups(&cfg).unwrap();
        assert_eq!(g[0].0, "num_bases=2");
        assert_eq!(g[1].1.kernel.num_bases, 5);
        cfg.sweep.parameter = "lmin".into();
        cfg.sweep.values = vec![0.05];
        assert_eq!(sweep_groups(&cfg).unwrap()[0].1.kernel.lmin, 0.05);
        cfg.sweep.values.clear();
        assert!(matches!(sweep_groups(&cfg), Err(Error::Config(_))));
        cfg.sweep.parameter = "alpha".into();
        cfg.sweep.values = vec![1.0];
        assert!(sweep_groups(&cfg).is_err());
    }

    #[test]
    fn ablation_requires_ak() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(ablation_groups(&cfg).unwrap().len(), 4);
        cfg.kernel.name = "rbf".into();
        assert!(ablation_groups(&cfg).is_err());
    }

    #[test]
    fn bench_matrix() {
        let g = bench_groups(&ExperimentConfig::default()).unwrap();
        assert_eq!(g.len(), 12);
        assert_eq!(g[0].0, "rbf-random");
    }
}

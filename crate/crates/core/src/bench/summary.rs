use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::metrics::{MetricRecord, Metrics, METRICS_HEADER, METRIC_NAMES};
use crate::error::{Error, Result};

/// Mean and population standard deviation, over runs, of each run's metric
/// curve averaged across the sample-count axis.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveSummary {
    pub label: String,
    pub n_runs: usize,
    pub mean: Metrics,
    pub std: Metrics,
}

pub const SUMMARY_HEADER: &str =
    "label,n_runs,smse_mean,smse_std,msll_mean,msll_std,nlpd_mean,nlpd_std,rmse_mean,rmse_std,mae_mean,mae_std";

impl CurveSummary {
    pub fn to_csv_row(&self) -> String {
        let mut s = format!("{},{}", self.label, self.n_runs);
        for (m, sd) in self.mean.values().iter().zip(self.std.values()) {
            let _ = write!(s, ",{m},{sd}");
        }
        s
    }
}

pub fn summary_csv(summaries: &[CurveSummary]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for sum in summaries {
        s.push_str(&sum.to_csv_row());
        s.push('\n');
    }
    s
}

/// Piecewise-linear interpolation through `(xs, ys)`, `xs` ascending,
/// held constant beyond the ends.
pub fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let hi = xs.partition_point(|&v| v <= x);
    let lo = hi - 1;
    if xs[lo] == x {
        return ys[lo];
    }
    let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + t * (ys[hi] - ys[lo])
}

/// Averages each run's curves over the integer sample counts shared by all
/// runs. Runs that do not overlap fall back to a plain per-epoch mean.
pub fn summarize_runs(label: &str, runs: &[Vec<MetricRecord>]) -> Result<CurveSummary> {
    let runs: Vec<&Vec<MetricRecord>> = runs.iter().filter(|r| !r.is_empty()).collect();
    if runs.is_empty() {
        return Err(Error::EmptyInput(format!("no metric records for `{label}`")));
    }
    let lo = runs.iter().map(|r| r[0].n_samples).max().unwrap();
    let hi = runs.iter().map(|r| r.last().unwrap().n_samples).min().unwrap();
    let averages: Vec<[f64; 5]> = runs
        .iter()
        .map(|run| {
            let xs: Vec<f64> = run.iter().map(|r| r.n_samples as f64).collect();
            let mut avg = [0.0; 5];
            for (k, slot) in avg.iter_mut().enumerate() {
                let ys: Vec<f64> = run.iter().map(|r| r.metrics.values()[k]).collect();
                *slot = if lo <= hi {
                    let sum: f64 = (lo..=hi).map(|n| interpolate(&xs, &ys, n as f64)).sum();
                    sum / (hi - lo + 1) as f64
                } else {
                    ys.iter().sum::<f64>() / ys.len() as f64
                };
            }
            avg
        })
        .collect();
    let n = averages.len() as f64;
    let mut mean = [0.0; 5];
    let mut std = [0.0; 5];
    for k in 0..5 {
        let m = averages.iter().map(|a| a[k]).sum::<f64>() / n;
        let var = averages.iter().map(|a| (a[k] - m).powi(2)).sum::<f64>() / n;
        mean[k] = m;
        std[k] = var.sqrt();
    }
    Ok(CurveSummary {
        label: label.to_string(),
        n_runs: averages.len(),
        mean: Metrics::from_values(mean),
        std: Metrics::from_values(std),
    })
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRecord>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        Some(h) => {
            let missing: Vec<&str> = METRICS_HEADER
                .split(',')
                .filter(|c| !h.split(',').any(|x| x.trim() == *c))
                .collect();
            return Err(Error::Config(format!(
                "unexpected metrics header `{h}` (missing: {})",
                missing.join(",")
            )));
        }
        None => return Err(Error::Config("empty metrics file".into())),
    }
    lines.map(MetricRecord::parse_csv_row).collect()
}

/// Reads metric CSVs; each `(file, seed)` pair is one run.
pub fn summarize_files(label: &str, paths: &[&Path]) -> Result<CurveSummary> {
    if paths.is_empty() {
        return Err(Error::EmptyInput("no metrics files given".into()));
    }
    let mut runs = Vec::new();
    for path in paths {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let records = parse_metrics_csv(&text).map_err(|e| match e {
            Error::Config(msg) => Error::parse(*path, msg),
            other => other,
        })?;
        let mut by_seed: BTreeMap<u64, Vec<MetricRecord>> = BTreeMap::new();
        for r in records {
            by_seed.entry(r.seed).or_default().push(r);
        }
        for (_, mut run) in by_seed {
            run.sort_by_key(|r| (r.n_samples, r.epoch));
            runs.push(run);
        }
    }
    summarize_runs(label, &runs)
}

pub fn metric_index(name: &str) -> Option<usize> {
    METRIC_NAMES.iter().position(|m| *m == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(seed: u64, points: &[(usize, f64)]) -> Vec<MetricRecord> {
        points
            .iter()
            .enumerate()
            .map(|(epoch, &(n, v))| MetricRecord {
                seed,
                epoch,
                n_samples: n,
                metrics: Metrics::from_values([v; 5]),
            })
            .collect()
    }

    #[test]
    fn single_run_has_zero_std() {
        let s = summarize_runs("a", &[curve(0, &[(10, 2.0), (20, 4.0)])]).unwrap();
        assert_eq!(s.std, Metrics::default());
        assert!((s.mean.smse - 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_constant_curves() {
        let s = summarize_runs(
            "a",
            &[curve(0, &[(5, 1.0), (9, 1.0)]), curve(1, &[(5, 3.0), (8, 3.0), (9, 3.0)])],
        )
        .unwrap();
        assert!((s.mean.msll - 2.0).abs() < 1e-12);
        assert!((s.std.msll - 1.0).abs() < 1e-12);
        assert_eq!(s.n_runs, 2);
    }

    #[test]
    fn interpolation_is_exact_at_knots() {
        let xs = [1.0, 3.0, 4.0];
        let ys = [0.1, 0.7, -2.0];
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(interpolate(&xs, &ys, *x), *y);
        }
        assert!((interpolate(&xs, &ys, 2.0) - 0.4).abs() < 1e-15);
        assert_eq!(interpolate(&xs, &ys, 0.0), 0.1);
        assert_eq!(interpolate(&xs, &ys, 9.0), -2.0);
    }

    #[test]
    fn empty_input_errors() {
        assert!(matches!(summarize_runs("x", &[]), Err(Error::EmptyInput(_))));
        assert!(matches!(summarize_files("x", &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn header_problems_name_the_column() {
        let err = parse_metrics_csv("seed,epoch,n_samples,smse,msll,nlpd,rmse\n").unwrap_err();
        assert!(err.to_string().contains("mae"), "{err}");
    }
}

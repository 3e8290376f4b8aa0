use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::mean_std;

pub const VARIANCE_FLOOR: f64 = 1e-10;

pub const METRIC_NAMES: [&str; 5] = ["smse", "msll", "nlpd", "rmse", "mae"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub smse: f64,
    pub msll: f64,
    pub nlpd: f64,
    pub rmse: f64,
    pub mae: f64,
}

impl Metrics {
    pub fn values(&self) -> [f64; 5] {
        [self.smse, self.msll, self.nlpd, self.rmse, self.mae]
    }

    pub fn from_values(v: [f64; 5]) -> Self {
        Metrics {
            smse: v[0],
            msll: v[1],
            nlpd: v[2],
            rmse: v[3],
            mae: v[4],
        }
    }
}

/// Metrics after one epoch of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub seed: u64,
    pub epoch: usize,
    pub n_samples: usize,
    pub metrics: Metrics,
}

pub const METRICS_HEADER: &str = "seed,epoch,n_samples,smse,msll,nlpd,rmse,mae";

impl MetricRecord {
    pub fn to_csv_row(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.seed, self.epoch, self.n_samples, m.smse, m.msll, m.nlpd, m.rmse, m.mae
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Config(format!(
                "metrics row needs 8 fields, found {}",
                fields.len()
            )));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|_| Error::Config(format!("bad integer `{s}`")));
        let real = |s: &str| s.parse::<f64>().map_err(|_| Error::Config(format!("bad number `{s}`")));
        let mut v = [0.0; 5];
        for (slot, s) in v.iter_mut().zip(&fields[3..]) {
            *slot = real(s)?;
        }
        Ok(MetricRecord {
            seed: int(fields[0])?,
            epoch: int(fields[1])? as usize,
            n_samples: int(fields[2])? as usize,
            metrics: Metrics::from_values(v),
        })
    }
}

fn gaussian_nlpd(y: f64, mu: f64, var: f64) -> f64 {
    let v = var.max(VARIANCE_FLOOR);
    0.5 * (2.0 * PI * v).ln() + (y - mu).powi(2) / (2.0 * v)
}

/// Scores a Gaussian predictive distribution against `truth`. All inputs are
/// in raw units; the trivial model for MSLL is a Gaussian with the mean and
/// (population) variance of `train_y`.
pub fn compute_metrics(mean: &[f64], var: &[f64], truth: &[f64], train_y: &[f64]) -> Result<Metrics> {
    let n = truth.len();
    for (context, len) in [("metrics mean", mean.len()), ("metrics variance", var.len())] {
        if len != n {
            return Err(Error::DimensionMismatch {
                context,
                expected: n,
                got: len,
            });
        }
    }
    if n == 0 {
        return Err(Error::EmptyInput("no test points".into()));
    }
    if train_y.is_empty() {
        return Err(Error::EmptyInput("no training targets for the trivial model".into()));
    }
    let (_, truth_std) = mean_std(truth);
    let truth_var = truth_std * truth_std;
    if !(truth_var > 0.0) {
        return Err(Error::DegenerateTruth);
    }
    let (train_mean, train_std) = mean_std(train_y);
    let train_var = train_std * train_std;

    let nf = n as f64;
    let mut sse = 0.0;
    let mut sae = 0.0;
    let mut nlpd = 0.0;
    let mut trivial = 0.0;
    for i in 0..n {
        let err = truth[i] - mean[i];
        sse += err * err;
        sae += err.abs();
        nlpd += gaussian_nlpd(truth[i], mean[i], var[i]);
        trivial += gaussian_nlpd(truth[i], train_mean, train_var);
    }
    let mse = sse / nf;
    let nlpd = nlpd / nf;
    Ok(Metrics {
        smse: mse / truth_var,
        msll: nlpd - trivial / nf,
        nlpd,
        rmse: mse.sqrt(),
        mae: sae / nf,
    })
}

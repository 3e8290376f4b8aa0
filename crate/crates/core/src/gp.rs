//! Exact GP regression with marginal-likelihood training.
//!
//! Inputs are normalized to roughly `[-1, 1]` and targets standardized with
//! statistics fixed when the model is created; everything inside the model
//! lives in those units.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamState, GroupId, ParamGroup};
use crate::env::Extent;
use crate::error::{Error, Result};
use crate::kernels::{Kernel, KernelSpec};
use crate::linalg::{cholesky, CholeskyFactor, DenseMatrix};

/// Adam learning rate for the scalar hyper-parameters.
pub const HYPER_LR: f64 = 0.01;
/// Adam learning rate for kernel network weights.
pub const NET_LR: f64 = 0.001;

const ENTROPY_GUARD: f64 = 1e-12;
const VARIANCE_CLAMP: f64 = 1e-10;
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub center: Vec<f64>,
    pub half_range: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl NormStats {
    pub fn new(center: Vec<f64>, half_range: Vec<f64>, y_mean: f64, y_std: f64) -> Result<Self> {
        if center.len() != half_range.len() {
            return Err(Error::DimensionMismatch {
                context: "NormStats center/half_range",
                expected: center.len(),
                got: half_range.len(),
            });
        }
        if !(y_std > 0.0) || half_range.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::Config(
                "normalization scales must be positive".into(),
            ));
        }
        Ok(NormStats {
            center,
            half_range,
            y_mean,
            y_std,
        })
    }

    /// Input statistics from the workspace extent, target statistics from
    /// `y_raw` (population standard deviation; 1 if the targets are constant).
    pub fn from_extent(extent: &Extent, y_raw: &[f64]) -> Result<Self> {
        let (mean, std) = mean_std(y_raw);
        let std = if std > 0.0 { std } else { 1.0 };
        Self::new(
            vec![
                0.5 * (extent.x_min + extent.x_max),
                0.5 * (extent.y_min + extent.y_max),
            ],
            vec![
                0.5 * (extent.x_max - extent.x_min),
                0.5 * (extent.y_max - extent.y_min),
            ],
            mean,
            std,
        )
    }

    /// Pass-through statistics for data that is already normalized.
    pub fn identity(dim: usize) -> Self {
        NormStats {
            center: vec![0.0; dim],
            half_range: vec![1.0; dim],
            y_mean: 0.0,
            y_std: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn normalize_inputs(&self, x_raw: &DenseMatrix) -> Result<DenseMatrix> {
        if x_raw.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "normalize_inputs",
                expected: self.dim(),
                got: x_raw.cols(),
            });
        }
        Ok(DenseMatrix::from_fn(x_raw.rows(), x_raw.cols(), |i, j| {
            (x_raw[(i, j)] - self.center[j]) / self.half_range[j]
        }))
    }

    pub fn standardize(&self, y_raw: &[f64]) -> Vec<f64> {
        y_raw.iter().map(|y| (y - self.y_mean) / self.y_std).collect()
    }

    pub fn destandardize(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| v * self.y_std + self.y_mean).collect()
    }

    pub fn destandardize_variance(&self, var: &[f64]) -> Vec<f64> {
        let s2 = self.y_std * self.y_std;
        var.iter().map(|v| v * s2).collect()
    }
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Posterior mean and latent variance at query points.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Standardized units.
    pub mean: Vec<f64>,
    /// Latent variance in standardized units².
    pub var: Vec<f64>,
    pub mean_raw: Vec<f64>,
    pub var_raw: Vec<f64>,
    noise_var: f64,
    y_std: f64,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Variance of a noisy observation (`ν + σ²`), standardized units.
    pub fn observed_var(&self) -> Vec<f64> {
        self.var.iter().map(|v| v + self.noise_var).collect()
    }

    pub fn observed_var_raw(&self) -> Vec<f64> {
        let s2 = self.y_std * self.y_std;
        self.observed_var().iter().map(|v| v * s2).collect()
    }
}

/// `½ ln(2πe·ν)` per entry.
pub fn predictive_entropy(var: &[f64]) -> Vec<f64> {
    let c = 2.0 * PI * std::f64::consts::E;
    var.iter().map(|v| 0.5 * (c * (v + ENTROPY_GUARD)).ln()).collect()
}

#[derive(Debug)]
struct Posterior {
    factor: CholeskyFactor,
    alpha: Vec<f64>,
}

/// Negative log marginal likelihood and its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    /// Kernel hyper-parameters followed by the log noise scale.
    pub hyper: Vec<f64>,
    pub net: Vec<f64>,
}

#[derive(Debug)]
pub struct GprModel {
    kernel: Box<dyn Kernel>,
    log_noise: f64,
    train_x: DenseMatrix,
    train_y: Vec<f64>,
    stats: NormStats,
    cache: OnceLock<Posterior>,
    hyper_opt: AdamState,
    net_opt: AdamState,
    lr_hyper: f64,
    lr_net: f64,
    warnings: usize,
}

impl Clone for GprModel {
    fn clone(&self) -> Self {
        GprModel {
            kernel: self.kernel.clone(),
            log_noise: self.log_noise,
            train_x: self.train_x.clone(),
            train_y: self.train_y.clone(),
            stats: self.stats.clone(),
            cache: OnceLock::new(),
            hyper_opt: self.hyper_opt.clone(),
            net_opt: self.net_opt.clone(),
            lr_hyper: self.lr_hyper,
            lr_net: self.lr_net,
            warnings: self.warnings,
        }
    }
}

impl GprModel {
    pub fn new(kernel: Box<dyn Kernel>, noise: f64, stats: NormStats) -> Self {
        let hyper_len = kernel.hyper_params().len() + 1;
        let net_len = kernel.net_params().len();
        GprModel {
            kernel,
            log_noise: noise.ln(),
            train_x: DenseMatrix::zeros(0, stats.dim()),
            train_y: Vec::new(),
            stats,
            cache: OnceLock::new(),
            hyper_opt: AdamState::new(hyper_len),
            net_opt: AdamState::new(net_len),
            lr_hyper: HYPER_LR,
            lr_net: NET_LR,
            warnings: 0,
        }
    }

    pub fn with_learning_rates(mut self, hyper: f64, net: f64) -> Self {
        self.lr_hyper = hyper;
        self.lr_net = net;
        self
    }

    pub fn kernel(&self) -> &dyn Kernel {
        self.kernel.as_ref()
    }

    pub fn noise(&self) -> f64 {
        self.log_noise.exp()
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn num_train(&self) -> usize {
        self.train_y.len()
    }

    pub fn train_x(&self) -> &DenseMatrix {
        &self.train_x
    }

    pub fn train_y(&self) -> &[f64] {
        &self.train_y
    }

    /// Number of optimizer steps that were rolled back.
    pub fn warnings(&self) -> usize {
        self.warnings
    }

    fn invalidate(&mut self) {
        self.cache = OnceLock::new();
    }

    /// Appends raw-unit data; inputs are normalized and targets standardized.
    pub fn add_data(&mut self, x_raw: &DenseMatrix, y_raw: &[f64]) -> Result<()> {
        let x = self.stats.normalize_inputs(x_raw)?;
        let y = self.stats.standardize(y_raw);
        self.add_normalized(&x, &y)
    }

    /// Appends data already in model units.
    pub fn add_normalized(&mut self, x: &DenseMatrix, y: &[f64]) -> Result<()> {
        if x.rows() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "add_data rows",
                expected: x.rows(),
                got: y.len(),
            });
        }
        if x.cols() != self.stats.dim() {
            return Err(Error::DimensionMismatch {
                context: "add_data columns",
                expected: self.stats.dim(),
                got: x.cols(),
            });
        }
        if x.rows() == 0 {
            return Ok(());
        }
        self.train_x = self.train_x.vstack(x)?;
        self.train_y.extend_from_slice(y);
        self.invalidate();
        Ok(())
    }

    fn noisy_covariance(&self) -> Result<DenseMatrix> {
        let mut k = self.kernel.self_matrix(&self.train_x)?;
        k.add_diagonal(self.noise().powi(2));
        Ok(k)
    }

    fn posterior(&self) -> Result<&Posterior> {
        if let Some(p) = self.cache.get() {
            return Ok(p);
        }
        let factor = cholesky(&self.noisy_covariance()?, 0.0)?;
        let alpha = factor.solve_vec(&self.train_y)?;
        let _ = self.cache.set(Posterior { factor, alpha });
        Ok(self.cache.get().expect("cache just set"))
    }

    /// Predicts at raw-unit query locations.
    pub fn predict(&self, x_query_raw: &DenseMatrix) -> Result<Prediction> {
        let xq = self.stats.normalize_inputs(x_query_raw)?;
        self.predict_normalized(&xq)
    }

    /// Predicts at query locations already in model units.
    pub fn predict_normalized(&self, xq: &DenseMatrix) -> Result<Prediction> {
        let prior = self.kernel.diagonal(xq)?;
        let (mean, var) = if self.num_train() == 0 {
            (vec![0.0; xq.rows()], prior)
        } else {
            let post = self.posterior()?;
            let cross = self.kernel.matrix(&self.train_x, xq)?;
            let n = self.num_train();
            let q = xq.rows();
            let mut mean = vec![0.0; q];
            for i in 0..n {
                let a = post.alpha[i];
                for (m, &k) in mean.iter_mut().zip(cross.row(i)) {
                    *m += a * k;
                }
            }
            let v = post.factor.solve_lower(&cross)?;
            let mut reduction = vec![0.0; q];
            for i in 0..n {
                for (r, &x) in reduction.iter_mut().zip(v.row(i)) {
                    *r += x * x;
                }
            }
            let var = prior
                .iter()
                .zip(&reduction)
                .map(|(p, r)| {
                    let v = p - r;
                    if v < 0.0 && v > -VARIANCE_CLAMP {
                        0.0
                    } else {
                        v.max(0.0)
                    }
                })
                .collect();
            (mean, var)
        };
        Ok(Prediction {
            mean_raw: self.stats.destandardize(&mean),
            var_raw: self.stats.destandardize_variance(&var),
            mean,
            var,
            noise_var: self.noise().powi(2),
            y_std: self.stats.y_std,
        })
    }

    /// `½(-yᵀK⁻¹y - ln det K - N ln 2π)` in standardized units.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        if self.num_train() == 0 {
            return Err(Error::EmptyInput("log marginal likelihood needs data".into()));
        }
        let post = self.posterior()?;
        let fit: f64 = self.train_y.iter().zip(&post.alpha).map(|(y, a)| y * a).sum();
        let n = self.num_train() as f64;
        Ok(-0.5 * (fit + post.factor.log_det() + n * (2.0 * PI).ln()))
    }

    /// Current parameters as `(hyper, net)` where `hyper` ends with the log
    /// noise scale.
    pub fn params(&self) -> (Vec<f64>, Vec<f64>) {
        let mut hyper = self.kernel.hyper_params();
        hyper.push(self.log_noise);
        (hyper, self.kernel.net_params())
    }

    pub fn set_params(&mut self, hyper: &[f64], net: &[f64]) -> Result<()> {
        let Some((&log_noise, kernel_hyper)) = hyper.split_last() else {
            return Err(Error::DimensionMismatch {
                context: "set_params hyper",
                expected: self.kernel.hyper_params().len() + 1,
                got: 0,
            });
        };
        self.kernel.set_hyper_params(kernel_hyper)?;
        self.kernel.set_net_params(net)?;
        self.log_noise = log_noise;
        self.invalidate();
        Ok(())
    }

    /// Negative log marginal likelihood and its analytic gradient, using
    /// `∂L/∂K_y = ½(K_y⁻¹ - ααᵀ)` with `α = K_y⁻¹y`.
    pub fn loss_and_gradient(&self) -> Result<LossGradient> {
        let n = self.num_train();
        if n == 0 {
            return Err(Error::EmptyInput("training loss needs data".into()));
        }
        let factor = cholesky(&self.noisy_covariance()?, 0.0)?;
        let alpha = factor.solve_vec(&self.train_y)?;
        let fit: f64 = self.train_y.iter().zip(&alpha).map(|(y, a)| y * a).sum();
        let loss = 0.5 * (fit + factor.log_det() + n as f64 * (2.0 * PI).ln());

        let mut dk = factor.inverse();
        for i in 0..n {
            for (j, v) in dk.row_mut(i).iter_mut().enumerate() {
                *v = 0.5 * (*v - alpha[i] * alpha[j]);
            }
        }
        let kg = self.kernel.gradient(&self.train_x, &dk)?;
        let trace: f64 = dk.diagonal().iter().sum();
        let mut hyper = kg.hyper;
        hyper.push(trace * 2.0 * self.noise().powi(2));
        Ok(LossGradient {
            loss,
            hyper,
            net: kg.net,
        })
    }

    /// Runs `n_iters` Adam steps on the negative log marginal likelihood.
    /// Returns the loss before each step. A step that fails numerically is
    /// rolled back and ends the run early.
    pub fn optimize(&mut self, n_iters: usize) -> Result<Vec<f64>> {
        let mut trace = Vec::with_capacity(n_iters);
        if n_iters == 0 {
            return Ok(trace);
        }
        if self.num_train() < 2 {
            return Err(Error::Config(format!(
                "optimization needs at least 2 training points, have {}",
                self.num_train()
            )));
        }
        for _ in 0..n_iters {
            let (hyper, net) = self.params();
            let lg = match self.loss_and_gradient() {
                Ok(lg) => lg,
                Err(e @ Error::NotPositiveDefinite { .. }) => {
                    warn!("stopping optimization: {e}");
                    self.warnings += 1;
                    break;
                }
                Err(e) => return Err(e),
            };
            let mut hyper_group = ParamGroup {
                id: GroupId::ScalarHyper,
                values: hyper.clone(),
                lr: self.lr_hyper,
            };
            let mut net_group = ParamGroup {
                id: GroupId::Network,
                values: net.clone(),
                lr: self.lr_net,
            };
            let (hyper_state, net_state) = (self.hyper_opt.clone(), self.net_opt.clone());
            let stepped = adam_step(&mut hyper_group, &lg.hyper, &mut self.hyper_opt)
                .and_then(|_| adam_step(&mut net_group, &lg.net, &mut self.net_opt));
            match stepped {
                Ok(()) => {
                    trace.push(lg.loss);
                    self.set_params(&hyper_group.values, &net_group.values)?;
                }
                Err(e @ Error::NonFiniteGradient { .. }) => {
                    warn!("rolling back optimizer step: {e}");
                    self.hyper_opt = hyper_state;
                    self.net_opt = net_state;
                    self.set_params(&hyper, &net)?;
                    self.warnings += 1;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(trace)
    }

    pub fn snapshot(&self) -> GprSnapshot {
        GprSnapshot {
            version: SNAPSHOT_VERSION,
            kernel: self.kernel.spec(),
            log_noise: self.log_noise,
            train_x: self.train_x.clone(),
            train_y: self.train_y.clone(),
            stats: self.stats.clone(),
            hyper_opt: self.hyper_opt.clone(),
            net_opt: self.net_opt.clone(),
            lr_hyper: self.lr_hyper,
            lr_net: self.lr_net,
        }
    }

    pub fn from_snapshot(snap: GprSnapshot) -> Result<Self> {
        if snap.version != SNAPSHOT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                snap.version
            )));
        }
        let kernel = snap.kernel.build()?;
        let mut model = GprModel::new(kernel, snap.log_noise.exp(), snap.stats)
            .with_learning_rates(snap.lr_hyper, snap.lr_net);
        model.log_noise = snap.log_noise;
        model.add_normalized(&snap.train_x, &snap.train_y)?;
        if snap.hyper_opt.len() != model.hyper_opt.len() || snap.net_opt.len() != model.net_opt.len() {
            return Err(Error::Config("checkpoint optimizer state does not match kernel".into()));
        }
        model.hyper_opt = snap.hyper_opt;
        model.net_opt = snap.net_opt;
        Ok(model)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.snapshot())
            .map_err(|e| Error::parse(path, e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let snap: GprSnapshot =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        Self::from_snapshot(snap)
    }
}

/// Serializable model state for resuming a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GprSnapshot {
    pub version: u32,
    pub kernel: KernelSpec,
    pub log_noise: f64,
    pub train_x: DenseMatrix,
    pub train_y: Vec<f64>,
    pub stats: NormStats,
    pub hyper_opt: AdamState,
    pub net_opt: AdamState,
    pub lr_hyper: f64,
    pub lr_net: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::RbfKernel;

    fn stats() -> NormStats {
        NormStats::new(vec![10.0, 10.0], vec![10.0, 10.0], 5.0, 2.0).unwrap()
    }

    fn rbf_model(noise: f64) -> GprModel {
        GprModel::new(Box::new(RbfKernel::new(0.5, 1.0)), noise, stats())
    }

    #[test]
    fn normalization_basics() {
        let s = stats();
        let x = s
            .normalize_inputs(&DenseMatrix::from_rows(&[[10.0, 10.0]]).unwrap())
            .unwrap();
        assert_eq!(x.row(0), &[0.0, 0.0]);
        assert_eq!(s.standardize(&[5.0]), vec![0.0]);
        let y = [3.25, -1.0, 7.5];
        let back = s.destandardize(&s.standardize(&y));
        for (a, b) in back.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adding_nothing_changes_nothing() {
        let mut m = rbf_model(0.1);
        m.add_data(&DenseMatrix::zeros(0, 2), &[]).unwrap();
        assert_eq!(m.num_train(), 0);
        assert!(m
            .add_data(&DenseMatrix::zeros(2, 2), &[1.0])
            .is_err());
    }

    #[test]
    fn prior_when_empty() {
        let m = rbf_model(0.1);
        let p = m.predict(&DenseMatrix::from_rows(&[[3.0, 4.0]]).unwrap()).unwrap();
        assert_eq!(p.mean, vec![0.0]);
        assert_eq!(p.var, vec![1.0]);
        assert_eq!(p.mean_raw, vec![5.0]);
        assert_eq!(p.var_raw, vec![4.0]);
    }

    #[test]
    fn interpolates_in_low_noise_limit() {
        let mut m = rbf_model(1e-6);
        let x = DenseMatrix::from_rows(&[[12.0, 8.0]]).unwrap();
        m.add_data(&x, &[9.0]).unwrap();
        let p = m.predict(&x).unwrap();
        assert!((p.mean_raw[0] - 9.0).abs() < 1e-4);
        assert!(p.var[0].abs() < 1e-4);
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let mut m = rbf_model(0.1);
        m.add_data(&DenseMatrix::from_rows(&[[0.0, 0.0]]).unwrap(), &[9.0])
            .unwrap();
        let p = m
            .predict(&DenseMatrix::from_rows(&[[400.0, 400.0]]).unwrap())
            .unwrap();
        assert!(p.mean[0].abs() < 1e-9);
        assert!((p.var[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_point_likelihood() {
        let mut m = GprModel::new(Box::new(RbfKernel::new(0.5, 1.5)), 0.4, NormStats::identity(2));
        m.add_normalized(&DenseMatrix::from_rows(&[[0.1, 0.2]]).unwrap(), &[0.8])
            .unwrap();
        let ky: f64 = 1.5 + 0.16;
        let expect = -0.5 * (0.64 / ky + ky.ln() + (2.0 * PI).ln());
        assert!((m.log_marginal_likelihood().unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_iterations_is_a_no_op() {
        let mut m = rbf_model(0.3);
        m.add_data(
            &DenseMatrix::from_rows(&[[1.0, 2.0], [5.0, 5.0]]).unwrap(),
            &[1.0, 2.0],
        )
        .unwrap();
        let before = m.params();
        assert!(m.optimize(0).unwrap().is_empty());
        assert_eq!(m.params(), before);
    }

    #[test]
    fn entropy_values() {
        let e = predictive_entropy(&[1.0 / (2.0 * PI * std::f64::consts::E), 1.0]);
        assert!(e[0].abs() < 1e-10);
        assert!((e[1] - 1.41894).abs() < 1e-5);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = rbf_model(0.3);
        m.add_data(
            &DenseMatrix::from_rows(&[[1.0, 2.0], [5.0, 5.0], [9.0, 1.0]]).unwrap(),
            &[1.0, 2.0, 4.0],
        )
        .unwrap();
        m.optimize(3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save_checkpoint(&path).unwrap();
        let back = GprModel::load_checkpoint(&path).unwrap();
        assert_eq!(back.snapshot(), m.snapshot());
        let q = DenseMatrix::from_rows(&[[3.0, 3.0]]).unwrap();
        assert_eq!(back.predict(&q).unwrap(), m.predict(&q).unwrap());
    }
}

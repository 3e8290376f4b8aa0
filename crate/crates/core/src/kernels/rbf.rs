use super::{check_cols, check_grad_shape, fill_pairwise, pair_weight, Kernel, KernelConfig, KernelGradient, KernelSpec};
use crate::error::{Error, Result};
use crate::linalg::{squared_distance, DenseMatrix};
use crate::rng::SeededRng;

/// Stationary squared-exponential kernel `α·exp(-‖x-x'‖²/2ℓ²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RbfKernel {
    pub log_lengthscale: f64,
    pub log_amplitude: f64,
}

pub(super) fn factory(cfg: &KernelConfig, _input_dim: usize, _rng: &mut SeededRng) -> Result<Box<dyn Kernel>> {
    Ok(Box::new(RbfKernel::new(cfg.lengthscale, cfg.amplitude)))
}

impl RbfKernel {
    pub fn new(lengthscale: f64, amplitude: f64) -> Self {
        RbfKernel {
            log_lengthscale: lengthscale.ln(),
            log_amplitude: amplitude.ln(),
        }
    }

    pub fn from_spec(spec: &KernelSpec) -> Result<Self> {
        match *spec {
            KernelSpec::Rbf {
                log_lengthscale,
                log_amplitude,
            } => Ok(RbfKernel {
                log_lengthscale,
                log_amplitude,
            }),
            _ => Err(Error::Config("expected an rbf kernel spec".into())),
        }
    }

    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }

    pub fn amplitude(&self) -> f64 {
        self.log_amplitude.exp()
    }
}

impl Kernel for RbfKernel {
    fn name(&self) -> &'static str {
        "rbf"
    }

    fn matrix(&self, x: &DenseMatrix, x2: &DenseMatrix) -> Result<DenseMatrix> {
        check_cols(x, x2, None)?;
        let alpha = self.amplitude();
        let scale = 1.0 / (2.0 * self.lengthscale().powi(2));
        Ok(fill_pairwise(x.rows(), x2.rows(), std::ptr::eq(x, x2), |i, j| {
            alpha * (-squared_distance(x.row(i), x2.row(j)) * scale).exp()
        }))
    }

    fn diagonal(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        Ok(vec![self.amplitude(); x.rows()])
    }

    fn hyper_params(&self) -> Vec<f64> {
        vec![self.log_lengthscale, self.log_amplitude]
    }

    fn set_hyper_params(&mut self, values: &[f64]) -> Result<()> {
        match *values {
            [l, a] => {
                self.log_lengthscale = l;
                self.log_amplitude = a;
                Ok(())
            }
            _ => Err(Error::DimensionMismatch {
                context: "rbf hyper-parameters",
                expected: 2,
                got: values.len(),
            }),
        }
    }

    fn gradient(&self, x: &DenseMatrix, dk: &DenseMatrix) -> Result<KernelGradient> {
        check_grad_shape(x, dk)?;
        let alpha = self.amplitude();
        let inv_l2 = 1.0 / self.lengthscale().powi(2);
        let (mut g_log_l, mut g_log_a) = (0.0, 0.0);
        for i in 0..x.rows() {
            for j in i..x.rows() {
                let c = pair_weight(dk, i, j);
                let d2 = squared_distance(x.row(i), x.row(j));
                let k = alpha * (-0.5 * d2 * inv_l2).exp();
                g_log_a += c * k;
                g_log_l += c * k * d2 * inv_l2;
            }
        }
        Ok(KernelGradient {
            hyper: vec![g_log_l, g_log_a],
            net: Vec::new(),
        })
    }

    fn spec(&self) -> KernelSpec {
        KernelSpec::Rbf {
            log_lengthscale: self.log_lengthscale,
            log_amplitude: self.log_amplitude,
        }
    }

    fn box_clone(&self) -> Box<dyn Kernel> {
        Box::new(self.clone())
    }
}

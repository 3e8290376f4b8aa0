use super::{check_cols, check_grad_shape, fill_pairwise, pair_weight, Kernel, KernelConfig, KernelGradient, KernelSpec};
use crate::autodiff::Mlp;
use crate::error::{Error, Result};
use crate::linalg::{squared_distance, DenseMatrix};
use crate::rng::SeededRng;

/// Deep kernel: RBF on network features, `α·exp(-‖g(x)-g(x')‖²/2ℓ²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DklKernel {
    pub log_lengthscale: f64,
    pub log_amplitude: f64,
    net: Mlp,
}

pub(super) fn factory(cfg: &KernelConfig, input_dim: usize, rng: &mut SeededRng) -> Result<Box<dyn Kernel>> {
    let net = Mlp::init(rng, &cfg.network_sizes(input_dim, cfg.dkl_features))?;
    Ok(Box::new(DklKernel {
        log_lengthscale: cfg.lengthscale.ln(),
        log_amplitude: cfg.amplitude.ln(),
        net,
    }))
}

impl DklKernel {
    pub fn new(lengthscale: f64, amplitude: f64, net: Mlp) -> Self {
        DklKernel {
            log_lengthscale: lengthscale.ln(),
            log_amplitude: amplitude.ln(),
            net,
        }
    }

    pub fn from_spec(spec: &KernelSpec) -> Result<Self> {
        match spec {
            KernelSpec::Dkl {
                log_lengthscale,
                log_amplitude,
                net,
            } => Ok(DklKernel {
                log_lengthscale: *log_lengthscale,
                log_amplitude: *log_amplitude,
                net: net.clone(),
            }),
            _ => Err(Error::Config("expected a dkl kernel spec".into())),
        }
    }

    pub fn features(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.net.predict(x)
    }
}

impl Kernel for DklKernel {
    fn name(&self) -> &'static str {
        "dkl"
    }

    fn matrix(&self, x: &DenseMatrix, x2: &DenseMatrix) -> Result<DenseMatrix> {
        check_cols(x, x2, Some(self.net.input_dim()))?;
        let symmetric = std::ptr::eq(x, x2);
        let f1 = self.features(x)?;
        let f2 = if symmetric { f1.clone() } else { self.features(x2)? };
        let alpha = self.log_amplitude.exp();
        let scale = 0.5 * (-2.0 * self.log_lengthscale).exp();
        Ok(fill_pairwise(x.rows(), x2.rows(), symmetric, |i, j| {
            alpha * (-squared_distance(f1.row(i), f2.row(j)) * scale).exp()
        }))
    }

    fn diagonal(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        Ok(vec![self.log_amplitude.exp(); x.rows()])
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
                context: "dkl hyper-parameters",
                expected: 2,
                got: values.len(),
            }),
        }
    }

    fn net_params(&self) -> Vec<f64> {
        self.net.params()
    }

    fn set_net_params(&mut self, values: &[f64]) -> Result<()> {
        self.net.set_params(values)
    }

    fn gradient(&self, x: &DenseMatrix, dk: &DenseMatrix) -> Result<KernelGradient> {
        check_grad_shape(x, dk)?;
        let (f, mut tape) = self.net.forward(x)?;
        let (n, p) = f.shape();
        let alpha = self.log_amplitude.exp();
        let inv_l2 = (-2.0 * self.log_lengthscale).exp();
        let (mut g_log_l, mut g_log_a) = (0.0, 0.0);
        let mut g_f = DenseMatrix::zeros(n, p);
        for i in 0..n {
            for j in i + 1..n {
                let c = pair_weight(dk, i, j);
                if c == 0.0 {
                    continue;
                }
                let d2 = squared_distance(f.row(i), f.row(j));
                let k = alpha * (-0.5 * d2 * inv_l2).exp();
                g_log_a += c * k;
                g_log_l += c * k * d2 * inv_l2;
                let coef = c * k * inv_l2;
                for q in 0..p {
                    let diff = f[(i, q)] - f[(j, q)];
                    g_f[(i, q)] -= coef * diff;
                    g_f[(j, q)] += coef * diff;
                }
            }
            g_log_a += dk[(i, i)] * alpha;
        }
        let net = self.net.backward(&mut tape, &g_f)?;
        Ok(KernelGradient {
            hyper: vec![g_log_l, g_log_a],
            net,
        })
    }

    fn spec(&self) -> KernelSpec {
        KernelSpec::Dkl {
            log_lengthscale: self.log_lengthscale,
            log_amplitude: self.log_amplitude,
            net: self.net.clone(),
        }
    }

    fn box_clone(&self) -> Box<dyn Kernel> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_warp_gives_constant_kernel() {
        let k = DklKernel::new(0.5, 2.0, Mlp::zeros(&[2, 4, 4, 2]).unwrap());
        let x = DenseMatrix::from_rows(&[[0.0, 1.0], [3.0, -2.0]]).unwrap();
        let m = k.matrix(&x, &x).unwrap();
        assert!(m.data().iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }
}

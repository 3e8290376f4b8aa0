use super::{check_cols, check_grad_shape, fill_pairwise, pair_weight, Kernel, KernelConfig, KernelGradient, KernelSpec};
use crate::autodiff::Mlp;
use crate::error::{Error, Result};
use crate::linalg::{squared_distance, DenseMatrix};
use crate::rng::SeededRng;

/// Gibbs kernel with a network length-scale function
/// `ℓ(x) = softplus(net(x)) + floor`, shared across input dimensions:
///
/// ```text
/// k(x, x') = α · (2ℓℓ' / (ℓ² + ℓ'²))^{D/2} · exp(-‖x-x'‖² / (ℓ² + ℓ'²))
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsKernel {
    pub log_amplitude: f64,
    net: Mlp,
    floor: f64,
}

fn softplus(r: f64) -> f64 {
    if r > 30.0 {
        r
    } else {
        r.exp().ln_1p()
    }
}

fn sigmoid(r: f64) -> f64 {
    1.0 / (1.0 + (-r).exp())
}

pub(super) fn factory(cfg: &KernelConfig, input_dim: usize, rng: &mut SeededRng) -> Result<Box<dyn Kernel>> {
    let sizes = cfg.network_sizes(input_dim, 1);
    let mut net = Mlp::init(rng, &sizes)?;
    // Shift the output bias so the initial length-scale function is centered
    // on the configured length-scale: softplus⁻¹(ℓ₀ - floor).
    let target = (cfg.lengthscale - cfg.gibbs_floor).max(1e-6);
    let offset = target.exp_m1().ln();
    let mut params = net.params();
    let last = params.len() - 1;
    params[last] += offset;
    net.set_params(&params)?;
    Ok(Box::new(GibbsKernel::new(cfg.amplitude, net, cfg.gibbs_floor)?))
}

impl GibbsKernel {
    pub fn new(amplitude: f64, net: Mlp, floor: f64) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(Error::DimensionMismatch {
                context: "gibbs length-scale network output",
                expected: 1,
                got: net.output_dim(),
            });
        }
        Ok(GibbsKernel {
            log_amplitude: amplitude.ln(),
            net,
            floor,
        })
    }

    pub fn from_spec(spec: &KernelSpec) -> Result<Self> {
        match spec {
            KernelSpec::Gibbs {
                log_amplitude,
                net,
                floor,
            } => Self::new(log_amplitude.exp(), net.clone(), *floor),
            _ => Err(Error::Config("expected a gibbs kernel spec".into())),
        }
    }

    pub fn amplitude(&self) -> f64 {
        self.log_amplitude.exp()
    }

    /// Length-scale function evaluated at each input row.
    pub fn lengthscales(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        let raw = self.net.predict(x)?;
        Ok(raw.data().iter().map(|&r| softplus(r) + self.floor).collect())
    }

    /// Kernel value for explicit length-scales at the two points.
    pub fn value_with_lengthscales(&self, x: &[f64], x2: &[f64], l1: f64, l2: f64) -> f64 {
        pair_value(self.amplitude(), x.len(), squared_distance(x, x2), l1, l2)
    }
}

#[inline]
fn pair_value(alpha: f64, dim: usize, d2: f64, l1: f64, l2: f64) -> f64 {
    let s = l1 * l1 + l2 * l2;
    let ratio = 2.0 * l1 * l2 / s;
    let prefactor = if dim % 2 == 0 {
        ratio.powi(dim as i32 / 2)
    } else {
        ratio.sqrt().powi(dim as i32)
    };
    alpha * prefactor * (-d2 / s).exp()
}

impl Kernel for GibbsKernel {
    fn name(&self) -> &'static str {
        "gibbs"
    }

    fn matrix(&self, x: &DenseMatrix, x2: &DenseMatrix) -> Result<DenseMatrix> {
        check_cols(x, x2, Some(self.net.input_dim()))?;
        let symmetric = std::ptr::eq(x, x2);
        let l1 = self.lengthscales(x)?;
        let l2 = if symmetric { l1.clone() } else { self.lengthscales(x2)? };
        let (alpha, dim) = (self.amplitude(), x.cols());
        Ok(fill_pairwise(x.rows(), x2.rows(), symmetric, |i, j| {
            pair_value(alpha, dim, squared_distance(x.row(i), x2.row(j)), l1[i], l2[j])
        }))
    }

    fn diagonal(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        Ok(vec![self.amplitude(); x.rows()])
    }

    fn hyper_params(&self) -> Vec<f64> {
        vec![self.log_amplitude]
    }

    fn set_hyper_params(&mut self, values: &[f64]) -> Result<()> {
        match *values {
            [a] => {
                self.log_amplitude = a;
                Ok(())
            }
            _ => Err(Error::DimensionMismatch {
                context: "gibbs hyper-parameters",
                expected: 1,
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
        let (raw, mut tape) = self.net.forward(x)?;
        let n = x.rows();
        let half_d = x.cols() as f64 / 2.0;
        let alpha = self.amplitude();
        let ls: Vec<f64> = raw.data().iter().map(|&r| softplus(r) + self.floor).collect();

        let mut g_log_a = 0.0;
        let mut g_l = vec![0.0; n];
        for i in 0..n {
            for j in i..n {
                let c = pair_weight(dk, i, j);
                if c == 0.0 {
                    continue;
                }
                let (li, lj) = (ls[i], ls[j]);
                let d2 = squared_distance(x.row(i), x.row(j));
                let k = pair_value(alpha, x.cols(), d2, li, lj);
                let s = li * li + lj * lj;
                // ∂ ln k / ∂ℓ for either endpoint.
                let dlog = |l: f64| half_d * (1.0 / l - 2.0 * l / s) + 2.0 * l * d2 / (s * s);
                g_log_a += c * k;
                g_l[i] += c * k * dlog(li);
                g_l[j] += c * k * dlog(lj);
            }
        }
        let g_raw: Vec<f64> = g_l
            .iter()
            .zip(raw.data())
            .map(|(g, &r)| g * sigmoid(r))
            .collect();
        let net = self.net.backward(&mut tape, &DenseMatrix::column_vector(&g_raw))?;
        Ok(KernelGradient {
            hyper: vec![g_log_a],
            net,
        })
    }

    fn spec(&self) -> KernelSpec {
        KernelSpec::Gibbs {
            log_amplitude: self.log_amplitude,
            net: self.net.clone(),
            floor: self.floor,
        }
    }

    fn box_clone(&self) -> Box<dyn Kernel> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Layer;
    use crate::kernels::RbfKernel;

    /// Network whose output is the constant `softplus⁻¹(c - floor)`.
    fn constant_net(c: f64, floor: f64) -> Mlp {
        let zero = |o, i| Layer {
            weights: DenseMatrix::zeros(o, i),
            bias: vec![0.0; o],
        };
        let mut last = zero(1, 4);
        last.bias[0] = (c - floor).exp_m1().ln();
        Mlp::from_layers(vec![zero(4, 2), zero(4, 4), last]).unwrap()
    }

    #[test]
    fn constant_lengthscale_degenerates_to_rbf() {
        let c = 0.37;
        let k = GibbsKernel::new(1.7, constant_net(c, 1e-4), 1e-4).unwrap();
        let rbf = RbfKernel::new(c, 1.7);
        let mut rng = SeededRng::new(8);
        let x = DenseMatrix::from_fn(9, 2, |_, _| rng.uniform_range(-1.0, 1.0));
        let diff = k.matrix(&x, &x).unwrap().max_abs_diff(&rbf.matrix(&x, &x).unwrap());
        assert!(diff < 1e-12, "diff {diff}");
    }

    #[test]
    fn initial_lengthscale_is_centered() {
        let cfg = KernelConfig {
            name: "gibbs".into(),
            ..KernelConfig::default()
        };
        let k = factory(&cfg, 2, &mut SeededRng::new(0)).unwrap();
        let g = GibbsKernel::from_spec(&k.spec()).unwrap();
        let ls = g.lengthscales(&DenseMatrix::zeros(1, 2)).unwrap();
        assert!(ls[0] > 0.2 && ls[0] < 1.2, "{ls:?}");
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(100.0), 100.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!(softplus(-50.0) > 0.0);
    }
}

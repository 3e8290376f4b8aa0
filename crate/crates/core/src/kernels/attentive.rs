//! The attentive kernel.
//!
//! Each input gets a weight vector over `M` fixed-length-scale RBF base
//! kernels and a membership vector; both are softmax outputs of a small
//! network, ℓ2-normalized. The kernel value is
//!
//! ```text
//! k(x, x') = α · (z̄ᵀz̄') · Σₘ w̄ₘ w̄'ₘ exp(-‖x-x'‖² / 2ℓₘ²)
//! ```
//!
//! so `k(x, x) = α` and memberships with zero overlap mask the correlation
//! regardless of distance.

use super::{
    base_lengthscales, check_cols, check_grad_shape, fill_pairwise, pair_weight, AkVariant,
    Kernel, KernelConfig, KernelGradient, KernelSpec, Spacing, VariantKind, EXP_CUTOFF,
};
use crate::autodiff::{GradientTape, Mlp};
use crate::error::{Error, Result};
use crate::linalg::{dot, squared_distance, DenseMatrix};
use crate::rng::SeededRng;

/// Per-input similarity weights `w` and memberships `z`, one row per input.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMatrices {
    pub w: DenseMatrix,
    pub z: DenseMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentiveKernel {
    pub log_amplitude: f64,
    lmin: f64,
    lmax: f64,
    spacing: Spacing,
    lengthscales: Vec<f64>,
    net: Mlp,
    variant: AkVariant,
}

pub(super) fn factory(cfg: &KernelConfig, input_dim: usize, rng: &mut SeededRng) -> Result<Box<dyn Kernel>> {
    let sizes = cfg.network_sizes(input_dim, cfg.num_bases);
    let net = Mlp::init(rng, &sizes)?;
    let variant = match cfg.variant {
        VariantKind::Full => AkVariant::Full,
        VariantKind::WeightOnly => AkVariant::WeightOnly,
        VariantKind::MaskOnly => AkVariant::MaskOnly,
        VariantKind::TwoNets => AkVariant::TwoNets {
            net2: Mlp::init(rng, &sizes)?,
        },
    };
    Ok(Box::new(AttentiveKernel::new(
        cfg.amplitude,
        cfg.lmin,
        cfg.lmax,
        cfg.spacing,
        net,
        variant,
    )?))
}

/// Softmax of one row followed by ℓ2 normalization. Returns
/// `(softmax, normalized)`.
fn softmax_normalized(raw: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s: Vec<f64> = raw.iter().map(|r| (r - max).exp()).collect();
    let total: f64 = s.iter().sum();
    s.iter_mut().for_each(|v| *v /= total);
    let norm = dot(&s, &s).sqrt();
    let u = s.iter().map(|v| v / norm).collect();
    (s, u)
}

/// Reverse pass of [`softmax_normalized`] for one row.
fn softmax_normalized_backward(s: &[f64], u: &[f64], g_u: &[f64]) -> Vec<f64> {
    let norm = dot(s, s).sqrt();
    let ug = dot(u, g_u);
    let g_s: Vec<f64> = u.iter().zip(g_u).map(|(ui, gi)| (gi - ui * ug) / norm).collect();
    let sg = dot(s, &g_s);
    s.iter().zip(&g_s).map(|(si, gi)| si * (gi - sg)).collect()
}

struct NetAttention {
    softmax: DenseMatrix,
    normalized: DenseMatrix,
}

fn apply_rows(raw: &DenseMatrix) -> NetAttention {
    let (n, m) = raw.shape();
    let mut softmax = DenseMatrix::zeros(n, m);
    let mut normalized = DenseMatrix::zeros(n, m);
    for i in 0..n {
        let (s, u) = softmax_normalized(raw.row(i));
        softmax.row_mut(i).copy_from_slice(&s);
        normalized.row_mut(i).copy_from_slice(&u);
    }
    NetAttention { softmax, normalized }
}

fn uniform_rows(n: usize, m: usize, value: f64) -> DenseMatrix {
    DenseMatrix::from_vec(n, m, vec![value; n * m]).expect("sized buffer")
}

impl AttentiveKernel {
    pub fn new(
        amplitude: f64,
        lmin: f64,
        lmax: f64,
        spacing: Spacing,
        net: Mlp,
        variant: AkVariant,
    ) -> Result<Self> {
        let m = net.output_dim();
        if m < 2 {
            return Err(Error::Config(format!("attentive kernel needs M >= 2 base kernels, got {m}")));
        }
        if !(lmin > 0.0 && lmin < lmax) {
            return Err(Error::Config(format!("need 0 < lmin < lmax, got {lmin} and {lmax}")));
        }
        if let AkVariant::TwoNets { net2 } = &variant {
            if net2.output_dim() != m || net2.input_dim() != net.input_dim() {
                return Err(Error::DimensionMismatch {
                    context: "attentive kernel second network",
                    expected: m,
                    got: net2.output_dim(),
                });
            }
        }
        Ok(AttentiveKernel {
            log_amplitude: amplitude.ln(),
            lmin,
            lmax,
            spacing,
            lengthscales: base_lengthscales(lmin, lmax, m, spacing),
            net,
            variant,
        })
    }

    pub fn from_spec(spec: &KernelSpec) -> Result<Self> {
        match spec {
            KernelSpec::Attentive {
                log_amplitude,
                lmin,
                lmax,
                num_bases,
                spacing,
                net,
                variant,
            } => {
                if net.output_dim() != *num_bases {
                    return Err(Error::DimensionMismatch {
                        context: "attentive kernel network output",
                        expected: *num_bases,
                        got: net.output_dim(),
                    });
                }
                Self::new(log_amplitude.exp(), *lmin, *lmax, *spacing, net.clone(), variant.clone())
            }
            _ => Err(Error::Config("expected an attentive kernel spec".into())),
        }
    }

    pub fn amplitude(&self) -> f64 {
        self.log_amplitude.exp()
    }

    pub fn num_bases(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn variant(&self) -> &AkVariant {
        &self.variant
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    fn check_input(&self, x: &DenseMatrix) -> Result<()> {
        if x.cols() != self.net.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "attentive kernel input dimension",
                expected: self.net.input_dim(),
                got: x.cols(),
            });
        }
        Ok(())
    }

    /// Softmax outputs before ℓ2 normalization. For the ablation variants the
    /// disabled component is a uniform `1/M` row.
    pub fn softmax_attention(&self, x: &DenseMatrix) -> Result<AttentionMatrices> {
        self.check_input(x)?;
        let (n, m) = (x.rows(), self.num_bases());
        let first = apply_rows(&self.net.predict(x)?).softmax;
        let uniform = || uniform_rows(n, m, 1.0 / m as f64);
        Ok(match &self.variant {
            AkVariant::Full => AttentionMatrices {
                w: first.clone(),
                z: first,
            },
            AkVariant::WeightOnly => AttentionMatrices { w: first, z: uniform() },
            AkVariant::MaskOnly => AttentionMatrices { w: uniform(), z: first },
            AkVariant::TwoNets { net2 } => AttentionMatrices {
                w: first,
                z: apply_rows(&net2.predict(x)?).softmax,
            },
        })
    }

    /// ℓ2-normalized weights and memberships used by the kernel.
    pub fn attention(&self, x: &DenseMatrix) -> Result<AttentionMatrices> {
        self.check_input(x)?;
        let (n, m) = (x.rows(), self.num_bases());
        let first = apply_rows(&self.net.predict(x)?).normalized;
        let uniform = || uniform_rows(n, m, 1.0 / (m as f64).sqrt());
        Ok(match &self.variant {
            AkVariant::Full => AttentionMatrices {
                w: first.clone(),
                z: first,
            },
            AkVariant::WeightOnly => AttentionMatrices { w: first, z: uniform() },
            AkVariant::MaskOnly => AttentionMatrices { w: uniform(), z: first },
            AkVariant::TwoNets { net2 } => AttentionMatrices {
                w: first,
                z: apply_rows(&net2.predict(x)?).normalized,
            },
        })
    }

    /// Index of the most weighted base kernel for each input.
    pub fn dominant_base(&self, x: &DenseMatrix) -> Result<Vec<usize>> {
        let att = self.attention(x)?;
        Ok((0..x.rows())
            .map(|i| {
                let row = att.w.row(i);
                let mut best = 0;
                for (m, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = m;
                    }
                }
                best
            })
            .collect())
    }

    /// `Σₘ w_m w'_m exp(-d²/2ℓₘ²)`; base kernels are visited from the longest
    /// length-scale down and the sum stops once the exponent passes the cutoff.
    #[inline]
    fn base_sum(&self, inv2: &[f64], w1: &[f64], w2: &[f64], d2: f64) -> f64 {
        let mut s = 0.0;
        for m in (0..inv2.len()).rev() {
            let e = d2 * inv2[m];
            if e > EXP_CUTOFF {
                break;
            }
            s += w1[m] * w2[m] * (-e).exp();
        }
        s
    }

    fn inv_two_l2(&self) -> Vec<f64> {
        self.lengthscales.iter().map(|l| 1.0 / (2.0 * l * l)).collect()
    }

    fn combine(
        &self,
        a1: &AttentionMatrices,
        x1: &DenseMatrix,
        a2: &AttentionMatrices,
        x2: &DenseMatrix,
        scale: f64,
        symmetric: bool,
    ) -> DenseMatrix {
        let inv2 = self.inv_two_l2();
        fill_pairwise(x1.rows(), x2.rows(), symmetric, |i, j| {
            let d2 = squared_distance(x1.row(i), x2.row(j));
            let o = dot(a1.z.row(i), a2.z.row(j));
            scale * o * self.base_sum(&inv2, a1.w.row(i), a2.w.row(j), d2)
        })
    }

    /// The kernel built from raw softmax outputs, without ℓ2 normalization
    /// and without the amplitude.
    pub fn unnormalized_matrix(&self, x: &DenseMatrix, x2: &DenseMatrix) -> Result<DenseMatrix> {
        check_cols(x, x2, Some(self.net.input_dim()))?;
        let a1 = self.softmax_attention(x)?;
        let a2 = self.softmax_attention(x2)?;
        Ok(self.combine(&a1, x, &a2, x2, 1.0, std::ptr::eq(x, x2)))
    }

    /// Kernel matrix from externally supplied attention rows.
    pub fn matrix_from_attention(
        &self,
        a1: &AttentionMatrices,
        x1: &DenseMatrix,
        a2: &AttentionMatrices,
        x2: &DenseMatrix,
    ) -> Result<DenseMatrix> {
        check_cols(x1, x2, None)?;
        let m = self.num_bases();
        for a in [a1, a2] {
            if a.w.cols() != m || a.z.cols() != a.w.cols() {
                return Err(Error::DimensionMismatch {
                    context: "attention columns",
                    expected: m,
                    got: a.w.cols(),
                });
            }
        }
        if a1.w.rows() != x1.rows() || a2.w.rows() != x2.rows() {
            return Err(Error::DimensionMismatch {
                context: "attention rows",
                expected: x1.rows(),
                got: a1.w.rows(),
            });
        }
        Ok(self.combine(a1, x1, a2, x2, self.amplitude(), false))
    }
}

impl Kernel for AttentiveKernel {
    fn name(&self) -> &'static str {
        "ak"
    }

    fn matrix(&self, x: &DenseMatrix, x2: &DenseMatrix) -> Result<DenseMatrix> {
        check_cols(x, x2, Some(self.net.input_dim()))?;
        let symmetric = std::ptr::eq(x, x2);
        let a1 = self.attention(x)?;
        let a2 = if symmetric { a1.clone() } else { self.attention(x2)? };
        Ok(self.combine(&a1, x, &a2, x2, self.amplitude(), symmetric))
    }

    fn diagonal(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        self.check_input(x)?;
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
                context: "attentive kernel hyper-parameters",
                expected: 1,
                got: values.len(),
            }),
        }
    }

    fn net_params(&self) -> Vec<f64> {
        let mut p = self.net.params();
        if let AkVariant::TwoNets { net2 } = &self.variant {
            p.extend(net2.params());
        }
        p
    }

    fn set_net_params(&mut self, values: &[f64]) -> Result<()> {
        let first = self.net.num_params();
        let second = match &self.variant {
            AkVariant::TwoNets { net2 } => net2.num_params(),
            _ => 0,
        };
        if values.len() != first + second {
            return Err(Error::DimensionMismatch {
                context: "attentive kernel network parameters",
                expected: first + second,
                got: values.len(),
            });
        }
        self.net.set_params(&values[..first])?;
        if let AkVariant::TwoNets { net2 } = &mut self.variant {
            net2.set_params(&values[first..])?;
        }
        Ok(())
    }

    fn gradient(&self, x: &DenseMatrix, dk: &DenseMatrix) -> Result<KernelGradient> {
        check_grad_shape(x, dk)?;
        self.check_input(x)?;
        let (n, m) = (x.rows(), self.num_bases());
        let alpha = self.amplitude();
        let inv2 = self.inv_two_l2();

        let (raw1, mut tape1) = self.net.forward(x)?;
        let att1 = apply_rows(&raw1);
        let mut second: Option<(NetAttention, GradientTape)> = None;
        let (w, z) = match &self.variant {
            AkVariant::Full => (att1.normalized.clone(), att1.normalized.clone()),
            AkVariant::WeightOnly => (
                att1.normalized.clone(),
                uniform_rows(n, m, 1.0 / (m as f64).sqrt()),
            ),
            AkVariant::MaskOnly => (
                uniform_rows(n, m, 1.0 / (m as f64).sqrt()),
                att1.normalized.clone(),
            ),
            AkVariant::TwoNets { net2 } => {
                let (raw2, tape2) = net2.forward(x)?;
                let att2 = apply_rows(&raw2);
                let z = att2.normalized.clone();
                second = Some((att2, tape2));
                (att1.normalized.clone(), z)
            }
        };

        let mut g_log_a = 0.0;
        let mut g_w = DenseMatrix::zeros(n, m);
        let mut g_z = DenseMatrix::zeros(n, m);
        let mut base = vec![0.0; m];
        for i in 0..n {
            for j in i..n {
                let c = pair_weight(dk, i, j);
                if c == 0.0 {
                    continue;
                }
                let d2 = squared_distance(x.row(i), x.row(j));
                for (b, &s) in base.iter_mut().zip(&inv2) {
                    let e = d2 * s;
                    *b = if e > EXP_CUTOFF { 0.0 } else { (-e).exp() };
                }
                let (wi, wj) = (w.row(i), w.row(j));
                let (zi, zj) = (z.row(i), z.row(j));
                let o = dot(zi, zj);
                let s: f64 = (0..m).map(|k| wi[k] * wj[k] * base[k]).sum();
                g_log_a += c * alpha * o * s;

                let cz = c * alpha * s;
                let cw = c * alpha * o;
                for k in 0..m {
                    g_z[(i, k)] += cz * zj[k];
                    g_z[(j, k)] += cz * zi[k];
                    g_w[(i, k)] += cw * wj[k] * base[k];
                    g_w[(j, k)] += cw * wi[k] * base[k];
                }
            }
        }

        let to_raw = |att: &NetAttention, g: &DenseMatrix| -> DenseMatrix {
            let mut out = DenseMatrix::zeros(n, m);
            for i in 0..n {
                let r = softmax_normalized_backward(att.softmax.row(i), att.normalized.row(i), g.row(i));
                out.row_mut(i).copy_from_slice(&r);
            }
            out
        };

        let net_grad = match (&self.variant, second) {
            (AkVariant::Full, _) => {
                let mut g = g_w.clone();
                for i in 0..n {
                    for (a, b) in g.row_mut(i).iter_mut().zip(g_z.row(i)) {
                        *a += b;
                    }
                }
                self.net.backward(&mut tape1, &to_raw(&att1, &g))?
            }
            (AkVariant::WeightOnly, _) => self.net.backward(&mut tape1, &to_raw(&att1, &g_w))?,
            (AkVariant::MaskOnly, _) => self.net.backward(&mut tape1, &to_raw(&att1, &g_z))?,
            (AkVariant::TwoNets { net2 }, Some((att2, mut tape2))) => {
                let mut g = self.net.backward(&mut tape1, &to_raw(&att1, &g_w))?;
                g.extend(net2.backward(&mut tape2, &to_raw(&att2, &g_z))?);
                g
            }
            (AkVariant::TwoNets { .. }, None) => unreachable!("second network evaluated above"),
        };

        Ok(KernelGradient {
            hyper: vec![g_log_a],
            net: net_grad,
        })
    }

    fn spec(&self) -> KernelSpec {
        KernelSpec::Attentive {
            log_amplitude: self.log_amplitude,
            lmin: self.lmin,
            lmax: self.lmax,
            num_bases: self.num_bases(),
            spacing: self.spacing,
            net: self.net.clone(),
            variant: self.variant.clone(),
        }
    }

    fn box_clone(&self) -> Box<dyn Kernel> {
        Box::new(self.clone())
    }
}

/// Covariance of the generative weighted-sum model, `Σₘ Wₘ Kₘ Wₘᵀ` with
/// `Kₘ = (Z Zᵀ) ⊙ k_RBF(X, X | ℓₘ)` and `Wₘ = diag(W[:, m])`.
///
/// Built with explicit matrix products, independently of the factored
/// per-pair evaluation in [`AttentiveKernel`].
pub fn akgpr_covariance(
    w: &DenseMatrix,
    z: &DenseMatrix,
    x: &DenseMatrix,
    lengthscales: &[f64],
) -> Result<DenseMatrix> {
    let n = x.rows();
    let m = lengthscales.len();
    if w.shape() != (n, m) {
        return Err(Error::DimensionMismatch {
            context: "akgpr_covariance W",
            expected: n * m,
            got: w.rows() * w.cols(),
        });
    }
    if z.rows() != n {
        return Err(Error::DimensionMismatch {
            context: "akgpr_covariance Z rows",
            expected: n,
            got: z.rows(),
        });
    }
    let mask = z.matmul(&z.transpose())?;
    let mut total = DenseMatrix::zeros(n, n);
    for (k, &l) in lengthscales.iter().enumerate() {
        let km = DenseMatrix::from_fn(n, n, |i, j| {
            mask[(i, j)] * super::rbf_value(x.row(i), x.row(j), l)
        });
        let wm = DenseMatrix::from_fn(n, n, |i, j| if i == j { w[(i, k)] } else { 0.0 });
        let term = wm.matmul(&km)?.matmul(&wm.transpose())?;
        for i in 0..n {
            for (t, v) in total.row_mut(i).iter_mut().zip(term.row(i)) {
                *t += v;
            }
        }
    }
    Ok(total)
}

//! Covariance functions behind a common [`Kernel`] trait.
//!
//! Kernels are created by name through a [`KernelRegistry`] from a
//! [`KernelConfig`], and persisted as a [`KernelSpec`] (the full parameter
//! state, networks included). Scale parameters live in the log domain so any
//! real parameter vector maps to a valid kernel.

mod attentive;
mod dkl;
mod gibbs;
mod rbf;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::Mlp;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::SeededRng;

pub use attentive::{akgpr_covariance, AttentionMatrices, AttentiveKernel};
pub use dkl::DklKernel;
pub use gibbs::GibbsKernel;
pub use rbf::RbfKernel;

/// Exponents beyond this are treated as exactly zero kernel contributions
/// (`exp(-50) ≈ 2e-22`).
pub(crate) const EXP_CUTOFF: f64 = 50.0;

/// `exp(-‖x-x'‖² / 2ℓ²)`.
pub fn rbf_value(x: &[f64], x2: &[f64], lengthscale: f64) -> f64 {
    let d2 = crate::linalg::squared_distance(x, x2);
    (-d2 / (2.0 * lengthscale * lengthscale)).exp()
}

/// Gradient of a scalar loss with respect to a kernel's parameters, split by
/// optimizer group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KernelGradient {
    /// Same order as [`Kernel::hyper_params`].
    pub hyper: Vec<f64>,
    /// Same order as [`Kernel::net_params`].
    pub net: Vec<f64>,
}

pub trait Kernel: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Cross-covariance `k(X, X2)`.
    fn matrix(&self, x: &DenseMatrix, x2: &DenseMatrix) -> Result<DenseMatrix>;

    /// Prior variances `k(x, x)` for each row.
    fn diagonal(&self, x: &DenseMatrix) -> Result<Vec<f64>>;

    /// Log-domain scalar hyper-parameters.
    fn hyper_params(&self) -> Vec<f64>;

    fn set_hyper_params(&mut self, values: &[f64]) -> Result<()>;

    /// Flattened network weights (empty for stationary kernels).
    fn net_params(&self) -> Vec<f64> {
        Vec::new()
    }

    fn set_net_params(&mut self, values: &[f64]) -> Result<()> {
        if values.is_empty() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context: "set_net_params",
                expected: 0,
                got: values.len(),
            })
        }
    }

    /// Chains `dk = ∂L/∂k(X, X)` back to the parameters.
    fn gradient(&self, x: &DenseMatrix, dk: &DenseMatrix) -> Result<KernelGradient>;

    fn spec(&self) -> KernelSpec;

    fn box_clone(&self) -> Box<dyn Kernel>;

    /// Self-covariance `k(X, X)`; exploits symmetry.
    fn self_matrix(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.matrix(x, x)
    }
}

impl Clone for Box<dyn Kernel> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

/// How the attentive kernel's base length-scales are laid out on
/// `[lmin, lmax]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Linear,
    Geometric,
}

/// Base length-scales, ascending.
pub fn base_lengthscales(lmin: f64, lmax: f64, count: usize, spacing: Spacing) -> Vec<f64> {
    if count == 1 {
        return vec![lmin];
    }
    let steps = (count - 1) as f64;
    (0..count)
        .map(|m| {
            let t = m as f64 / steps;
            match spacing {
                Spacing::Linear => lmin + t * (lmax - lmin),
                Spacing::Geometric => lmin * (lmax / lmin).powf(t),
            }
        })
        .collect()
}

/// Attentive-kernel ablation variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum AkVariant {
    /// One network drives both the weights and the memberships.
    Full,
    /// Length-scale selection only; memberships are constant.
    WeightOnly,
    /// Instance selection only; weights are uniform.
    MaskOnly,
    /// Separate networks for weights (`net`) and memberships (`net2`).
    TwoNets { net2: Mlp },
}

impl AkVariant {
    pub fn label(&self) -> &'static str {
        match self {
            AkVariant::Full => "full",
            AkVariant::WeightOnly => "weight_only",
            AkVariant::MaskOnly => "mask_only",
            AkVariant::TwoNets { .. } => "two_nets",
        }
    }
}

/// Complete serializable state of a kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Rbf {
        log_lengthscale: f64,
        log_amplitude: f64,
    },
    Attentive {
        log_amplitude: f64,
        lmin: f64,
        lmax: f64,
        num_bases: usize,
        #[serde(default)]
        spacing: Spacing,
        net: Mlp,
        variant: AkVariant,
    },
    Gibbs {
        log_amplitude: f64,
        net: Mlp,
        floor: f64,
    },
    Dkl {
        log_lengthscale: f64,
        log_amplitude: f64,
        net: Mlp,
    },
}

impl KernelSpec {
    pub fn build(&self) -> Result<Box<dyn Kernel>> {
        Ok(match self {
            KernelSpec::Rbf { .. } => Box::new(RbfKernel::from_spec(self)?),
            KernelSpec::Attentive { .. } => Box::new(AttentiveKernel::from_spec(self)?),
            KernelSpec::Gibbs { .. } => Box::new(GibbsKernel::from_spec(self)?),
            KernelSpec::Dkl { .. } => Box::new(DklKernel::from_spec(self)?),
        })
    }
}

/// Which attentive-kernel variant to construct.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    #[default]
    Full,
    WeightOnly,
    MaskOnly,
    TwoNets,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [
        VariantKind::Full,
        VariantKind::WeightOnly,
        VariantKind::MaskOnly,
        VariantKind::TwoNets,
    ];

    pub fn label(self) -> &'static str {
        match self {
            VariantKind::Full => "full",
            VariantKind::WeightOnly => "weight_only",
            VariantKind::MaskOnly => "mask_only",
            VariantKind::TwoNets => "two_nets",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(VariantKind::Full),
            "weight_only" | "weight" => Ok(VariantKind::WeightOnly),
            "mask_only" | "mask" => Ok(VariantKind::MaskOnly),
            "two_nets" | "nnx2" => Ok(VariantKind::TwoNets),
            other => Err(Error::UnknownKind {
                what: "ablation variant",
                name: other.to_string(),
            }),
        }
    }
}

/// Initial values and architecture for building a kernel by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub name: String,
    pub lengthscale: f64,
    pub amplitude: f64,
    /// Number of base kernels `M` of the attentive kernel.
    pub num_bases: usize,
    /// Hidden width `H` of every kernel network (two hidden layers).
    pub hidden: usize,
    pub lmin: f64,
    pub lmax: f64,
    pub spacing: Spacing,
    pub variant: VariantKind,
    /// Output dimension of the deep-kernel warp.
    pub dkl_features: usize,
    /// Lower bound added to the Gibbs length-scale function.
    pub gibbs_floor: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            name: "ak".into(),
            lengthscale: 0.5,
            amplitude: 1.0,
            num_bases: 10,
            hidden: 10,
            lmin: 0.01,
            lmax: 0.5,
            spacing: Spacing::Linear,
            variant: VariantKind::Full,
            dkl_features: 2,
            gibbs_floor: 1e-4,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lengthscale > 0.0 && self.amplitude > 0.0) {
            return bad(format!(
                "lengthscale and amplitude must be positive (got {} and {})",
                self.lengthscale, self.amplitude
            ));
        }
        if !(self.lmin > 0.0 && self.lmin < self.lmax) {
            return bad(format!(
                "need 0 < lmin < lmax (got {} and {})",
                self.lmin, self.lmax
            ));
        }
        if self.num_bases < 2 {
            return bad(format!("num_bases must be at least 2 (got {})", self.num_bases));
        }
        if self.hidden == 0 || self.dkl_features == 0 {
            return bad("hidden and dkl_features must be positive".into());
        }
        if !(self.gibbs_floor > 0.0) {
            return bad("gibbs_floor must be positive".into());
        }
        Ok(())
    }

    fn network_sizes(&self, input_dim: usize, output_dim: usize) -> [usize; 4] {
        [input_dim, self.hidden, self.hidden, output_dim]
    }
}

pub type KernelFactory = fn(&KernelConfig, usize, &mut SeededRng) -> Result<Box<dyn Kernel>>;

/// Name → constructor table for kernels.
pub struct KernelRegistry {
    factories: BTreeMap<String, KernelFactory>,
}

impl KernelRegistry {
    pub fn empty() -> Self {
        KernelRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, factory: KernelFactory) {
        self.factories.insert(name.into(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    /// Builds the kernel named in `config` for `input_dim`-dimensional inputs.
    pub fn build(
        &self,
        config: &KernelConfig,
        input_dim: usize,
        rng: &mut SeededRng,
    ) -> Result<Box<dyn Kernel>> {
        config.validate()?;
        let factory = self
            .factories
            .get(config.name.as_str())
            .ok_or_else(|| Error::UnknownKind {
                what: "kernel",
                name: config.name.clone(),
            })?;
        factory(config, input_dim, rng)
    }
}

impl Default for KernelRegistry {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register("rbf", rbf::factory);
        reg.register("ak", attentive::factory);
        reg.register("gibbs", gibbs::factory);
        reg.register("dkl", dkl::factory);
        reg
    }
}

impl fmt::Debug for KernelRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelRegistry")
            .field("names", &self.names())
            .finish()
    }
}

pub(crate) fn check_cols(x: &DenseMatrix, x2: &DenseMatrix, expected: Option<usize>) -> Result<()> {
    if x.cols() != x2.cols() {
        return Err(Error::DimensionMismatch {
            context: "kernel inputs",
            expected: x.cols(),
            got: x2.cols(),
        });
    }
    if let Some(d) = expected {
        if x.cols() != d {
            return Err(Error::DimensionMismatch {
                context: "kernel input dimension",
                expected: d,
                got: x.cols(),
            });
        }
    }
    Ok(())
}

pub(crate) fn check_grad_shape(x: &DenseMatrix, dk: &DenseMatrix) -> Result<()> {
    if dk.shape() != (x.rows(), x.rows()) {
        return Err(Error::DimensionMismatch {
            context: "kernel gradient dK shape",
            expected: x.rows() * x.rows(),
            got: dk.rows() * dk.cols(),
        });
    }
    Ok(())
}

/// Fills an `n × n2` matrix from `f(i, j)`, evaluating only the upper
/// triangle when the two inputs are the same matrix.
pub(crate) fn fill_pairwise(
    n: usize,
    n2: usize,
    symmetric: bool,
    mut f: impl FnMut(usize, usize) -> f64,
) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(n, n2);
    if symmetric {
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
    } else {
        for i in 0..n {
            for j in 0..n2 {
                out[(i, j)] = f(i, j);
            }
        }
    }
    out
}

/// Coefficient of pair `(i, j)`, `i ≤ j`, when a symmetric kernel matrix is
/// traversed through its upper triangle only.
#[inline]
pub(crate) fn pair_weight(dk: &DenseMatrix, i: usize, j: usize) -> f64 {
    if i == j {
        dk[(i, i)]
    } else {
        dk[(i, j)] + dk[(j, i)]
    }
}

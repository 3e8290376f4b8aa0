//! Small tanh MLP with a hand-written reverse pass, plus Adam.
//!
//! The networks inside the non-stationary kernels are tiny (a few hundred
//! parameters), so the backward pass is written out per layer rather than
//! through a general computation graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    fn fan_out(&self) -> usize {
        self.weights.rows()
    }

    fn num_params(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }
}

/// Feed-forward network: tanh on every hidden layer, identity on the output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Intermediates of one forward pass, consumed by exactly one backward pass.
#[derive(Debug)]
pub struct GradientTape {
    /// Input to each layer; entries after the first are tanh activations.
    layer_inputs: Vec<DenseMatrix>,
    consumed: bool,
}

impl GradientTape {
    pub fn is_consumed(&self) -> bool {
        self.consumed
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(format!(
            "an MLP needs at least input and output sizes, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Config(format!(
            "MLP layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

impl Mlp {
    /// Weights and biases uniform in `[-1/√fan_in, 1/√fan_in]`.
    pub fn init(rng: &mut SeededRng, layer_sizes: &[usize]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights =
                    DenseMatrix::from_fn(fan_out, fan_in, |_, _| rng.uniform_range(-bound, bound));
                let bias = (0..fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
                Layer { weights, bias }
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer {
                weights: DenseMatrix::zeros(w[1], w[0]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::DimensionMismatch {
                    context: "Mlp::from_layers",
                    expected: pair[0].fan_out(),
                    got: pair[1].fan_in(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(Error::DimensionMismatch {
                    context: "Mlp::from_layers (bias)",
                    expected: l.fan_out(),
                    got: l.bias.len(),
                });
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(Layer::fan_out));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Flattened parameters: per layer, row-major weights then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                context: "Mlp::set_params",
                expected: self.num_params(),
                got: values.len(),
            });
        }
        let mut rest = values;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.data().len());
            let (b, tail) = tail.split_at(l.bias.len());
            l.weights = DenseMatrix::from_vec(l.fan_out(), l.fan_in(), w.to_vec())?;
            l.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    fn check_input(&self, x: &DenseMatrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp input columns",
                expected: self.input_dim(),
                got: x.cols(),
            });
        }
        Ok(())
    }

    fn affine(layer: &Layer, input: &DenseMatrix) -> DenseMatrix {
        let n = input.rows();
        let mut out = DenseMatrix::zeros(n, layer.fan_out());
        for i in 0..n {
            let xi = input.row(i);
            let oi = out.row_mut(i);
            for (o, (k, b)) in oi.iter_mut().zip(layer.bias.iter().enumerate()) {
                *o = b + crate::linalg::dot(layer.weights.row(k), xi);
            }
        }
        out
    }

    /// Raw network outputs, one row per input row, without recording a tape.
    pub fn predict(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut a = x.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            a = Self::affine(layer, &a);
            if idx < last {
                tanh_in_place(&mut a);
            }
        }
        Ok(a)
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<(DenseMatrix, GradientTape)> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut z = Self::affine(layer, &a);
            if idx < last {
                tanh_in_place(&mut z);
            }
            inputs.push(a);
            a = z;
        }
        Ok((
            a,
            GradientTape {
                layer_inputs: inputs,
                consumed: false,
            },
        ))
    }

    /// Gradient of `Σᵢⱼ output_grads[i,j]·output[i,j]` with respect to
    /// [`Mlp::params`].
    pub fn backward(&self, tape: &mut GradientTape, output_grads: &DenseMatrix) -> Result<Vec<f64>> {
        if tape.consumed {
            return Err(Error::TapeAlreadyConsumed);
        }
        let n = tape.layer_inputs.first().map_or(0, DenseMatrix::rows);
        if output_grads.shape() != (n, self.output_dim()) {
            return Err(Error::DimensionMismatch {
                context: "mlp backward output gradient",
                expected: n * self.output_dim(),
                got: output_grads.rows() * output_grads.cols(),
            });
        }
        tape.consumed = true;

        let mut per_layer: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        let mut g = output_grads.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.layer_inputs[idx];
            let (fan_out, fan_in) = (layer.fan_out(), layer.fan_in());
            let mut grad = vec![0.0; fan_out * fan_in + fan_out];
            for i in 0..n {
                let gi = g.row(i);
                let xi = input.row(i);
                for (k, &gk) in gi.iter().enumerate() {
                    if gk == 0.0 {
                        continue;
                    }
                    let row = &mut grad[k * fan_in..(k + 1) * fan_in];
                    for (w, &x) in row.iter_mut().zip(xi) {
                        *w += gk * x;
                    }
                    grad[fan_out * fan_in + k] += gk;
                }
            }
            per_layer[idx] = grad;

            if idx > 0 {
                // Propagate through the affine map, then through tanh using the
                // stored activation a: d tanh = 1 - a².
                let mut prev = DenseMatrix::zeros(n, fan_in);
                for i in 0..n {
                    let gi = g.row(i);
                    let ai = input.row(i);
                    let pi = prev.row_mut(i);
                    for (k, &gk) in gi.iter().enumerate() {
                        if gk == 0.0 {
                            continue;
                        }
                        for (p, &w) in pi.iter_mut().zip(layer.weights.row(k)) {
                            *p += gk * w;
                        }
                    }
                    for (p, &a) in pi.iter_mut().zip(ai) {
                        *p *= 1.0 - a * a;
                    }
                }
                g = prev;
            }
        }
        Ok(per_layer.concat())
    }
}

fn tanh_in_place(m: &mut DenseMatrix) {
    for i in 0..m.rows() {
        m.row_mut(i).iter_mut().for_each(|v| *v = v.tanh());
    }
}

/// Which optimizer a trainable value belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupId {
    Network,
    ScalarHyper,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub id: GroupId,
    pub values: Vec<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn second_moments(&self) -> &[f64] {
        &self.v
    }
}

/// One bias-corrected Adam update. Nothing is modified when a gradient is
/// non-finite.
pub fn adam_step(group: &mut ParamGroup, grads: &[f64], state: &mut AdamState) -> Result<()> {
    if grads.len() != group.values.len() {
        return Err(Error::DimensionMismatch {
            context: "adam_step gradients",
            expected: group.values.len(),
            got: grads.len(),
        });
    }
    if state.len() != group.values.len() {
        return Err(Error::DimensionMismatch {
            context: "adam_step state",
            expected: group.values.len(),
            got: state.len(),
        });
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (((p, &g), m), v) in group
        .values
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= group.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

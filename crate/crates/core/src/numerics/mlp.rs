use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Forward-pass mode. Training mode owns the dropout randomness.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Stack of affine layers with SiLU between them.
///
/// Parameters live in a [`ParamStore`] as `{prefix}.l{k}.w` (`[in, out]`) and
/// `{prefix}.l{k}.b` (`[1, out]`, only for layers with a bias).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub prefix: String,
    /// `widths[0]` is the input width; one layer per following entry.
    pub widths: Vec<usize>,
    pub bias: Vec<bool>,
    /// Apply SiLU after the last layer as well.
    pub final_activation: bool,
    /// Dropout after each hidden activation, training mode only.
    pub dropout: f64,
}

impl MlpSpec {
    pub fn new(prefix: impl Into<String>, widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Input(format!(
                "mlp widths must have >= 2 entries, all >= 1; got {widths:?}"
            )));
        }
        Ok(MlpSpec {
            prefix: prefix.into(),
            widths: widths.to_vec(),
            bias: vec![true; widths.len() - 1],
            final_activation: false,
            dropout: 0.0,
        })
    }

    pub fn with_dropout(mut self, p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Input(format!("dropout probability {p} not in [0, 1)")));
        }
        self.dropout = p;
        Ok(self)
    }

    pub fn with_final_activation(mut self, on: bool) -> Self {
        self.final_activation = on;
        self
    }

    pub fn without_final_bias(mut self) -> Self {
        if let Some(b) = self.bias.last_mut() {
            *b = false;
        }
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias.iter_mut().for_each(|b| *b = false);
        self
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.l{layer}.w", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.l{layer}.b", self.prefix)
    }

    /// Uniform init in `±sqrt(1/fan_in)` for weights and biases.
    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for k in 0..self.layers() {
            let (fan_in, fan_out) = (self.widths[k], self.widths[k + 1]);
            let bound = (1.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            store.insert(self.weight_name(k), Tensor::from_parts(vec![fan_in, fan_out], w));
            if self.bias[k] {
                let b: Vec<f64> = (0..fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
                store.insert(self.bias_name(k), Tensor::from_parts(vec![1, fan_out], b));
            }
        }
    }

    /// Zeroes the final layer's weights (and bias, if any).
    pub fn zero_final(&self, store: &mut ParamStore) -> Result<()> {
        let last = self.layers() - 1;
        store.get_mut(&self.weight_name(last))?.data_mut().fill(0.0);
        if self.bias[last] {
            store.get_mut(&self.bias_name(last))?.data_mut().fill(0.0);
        }
        Ok(())
    }

    /// Records the stack on `g`. Input is `[rows, widths[0]]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, input: Var, mode: &mut Mode<'_>) -> Result<Var> {
        let mut h = input;
        for k in 0..self.layers() {
            let w = g.param(store, &self.weight_name(k))?;
            let in_w = g.value(h).cols();
            let expected = g.value(w).rows();
            if in_w != expected || expected != self.widths[k] {
                return Err(Error::shape(
                    format!("{} layer {k} input width", self.prefix),
                    self.widths[k],
                    in_w,
                ));
            }
            if g.value(w).cols() != self.widths[k + 1] {
                return Err(Error::shape(
                    format!("{} layer {k} output width", self.prefix),
                    self.widths[k + 1],
                    g.value(w).cols(),
                ));
            }
            h = g.matmul(h, w)?;
            if self.bias[k] {
                let b = g.param(store, &self.bias_name(k))?;
                h = g.add_row(h, b)?;
            }
            let last = k + 1 == self.layers();
            if !last || self.final_activation {
                h = g.silu(h);
            }
            if !last && self.dropout > 0.0 {
                if let Mode::Train(rng) = mode {
                    let keep = 1.0 - self.dropout;
                    let shape = g.value(h).shape().to_vec();
                    let n: usize = shape.iter().product();
                    let mask: Vec<f64> = (0..n)
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    h = g.mul_const(h, Tensor::from_parts(shape, mask))?;
                }
            }
        }
        Ok(h)
    }
}

/// Applies an MLP to a plain tensor.
pub fn mlp_apply(spec: &MlpSpec, store: &ParamStore, input: &Tensor, mode: &mut Mode<'_>) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let y = spec.forward(&mut g, store, x, mode)?;
    Ok(g.value(y).clone())
}

pub fn silu(x: &Tensor) -> Tensor {
    x.map(|v| v * super::autodiff::sigmoid(v))
}

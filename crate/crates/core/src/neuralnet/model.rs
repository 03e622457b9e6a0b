use rand::Rng;

use super::config::{LossKind, MlpConfig};
use super::train::EpochLoss;
use super::NnError;
use crate::featurize::FeatureMatrix;

/// Predictions are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

/// Fully connected layer; `weights` is `out_dim x in_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Dense {
        Dense { in_dim, out_dim, weights: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    fn glorot<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Dense {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.gen_range(-limit..=limit)).collect();
        Dense { in_dim, out_dim, weights, bias: vec![0.0; out_dim] }
    }

    /// `z = W a + b`, skipping zero inputs.
    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        let nonzero: Vec<usize> = (0..input.len()).filter(|&j| input[j] != 0.0).collect();
        out.clear();
        out.extend(self.bias.iter().enumerate().map(|(o, &b)| {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            b + nonzero.iter().map(|&j| row[j] * input[j]).sum::<f64>()
        }));
    }
}

/// Per-tensor gradients, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()]).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|&g| g == 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub layers: Vec<Dense>,
    pub history: Vec<EpochLoss>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-example loss for prediction `p` and target `y`.
pub fn loss(kind: LossKind, p: f64, y: f64) -> f64 {
    match kind {
        LossKind::Mae => (p - y).abs(),
        LossKind::BinaryNll => {
            let c = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * c.ln() + (1.0 - y) * (1.0 - c).ln())
        }
    }
}

/// d loss / d z at the output pre-activation, for `p = sigmoid(z)`.
fn output_delta(kind: LossKind, p: f64, y: f64) -> f64 {
    match kind {
        LossKind::Mae => {
            let sign = if p > y {
                1.0
            } else if p < y {
                -1.0
            } else {
                0.0
            };
            sign * p * (1.0 - p)
        }
        // the clamp is flat outside (eps, 1 - eps)
        LossKind::BinaryNll if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP => p - y,
        LossKind::BinaryNll => 0.0,
    }
}

impl MlpModel {
    /// Randomly initialised network for `input_dim` features.
    pub fn init<R: Rng>(config: MlpConfig, input_dim: usize, rng: &mut R) -> Result<MlpModel, NnError> {
        config.validate()?;
        let mut dims = vec![input_dim];
        dims.extend(config.hidden_sizes()?);
        dims.push(1);
        let layers = dims.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect();
        Ok(MlpModel { config, layers, history: Vec::new() })
    }

    /// A model with explicit layers; dims must chain and end in one unit.
    pub fn from_layers(config: MlpConfig, layers: Vec<Dense>) -> Result<MlpModel, NnError> {
        let last = layers.last().ok_or(NnError::DimMismatch { expected: 1, got: 0 })?;
        if last.out_dim != 1 {
            return Err(NnError::DimMismatch { expected: 1, got: last.out_dim });
        }
        for l in &layers {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(NnError::DimMismatch { expected: l.in_dim * l.out_dim, got: l.weights.len() });
            }
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(NnError::DimMismatch { expected: w[0].out_dim, got: w[1].in_dim });
            }
        }
        Ok(MlpModel { config, layers, history: Vec::new() })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    /// `[input, hidden..., 1]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.out_dim)).collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::DimMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Pre-activations of every layer; the last holds the output logit.
    fn forward_trace(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut acts = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.out_dim);
            layer.affine(&acts[l], &mut z);
            let a = if l == last { vec![sigmoid(z[0])] } else { z.iter().map(|&v| v.max(0.0)).collect() };
            pre.push(z);
            acts.push(a);
        }
        (pre, acts)
    }

    /// Probability of the positive class for one row.
    pub fn forward(&self, x: &[f64]) -> Result<f64, NnError> {
        self.check_dim(x)?;
        let (_, acts) = self.forward_trace(x);
        Ok(acts.last().unwrap()[0])
    }

    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<f64>, NnError> {
        if x.n_cols() != self.input_dim() {
            return Err(NnError::DimMismatch { expected: self.input_dim(), got: x.n_cols() });
        }
        Ok(x.rows().map(|row| self.forward_trace(row).1.last().unwrap()[0]).collect())
    }

    /// Mean loss over a batch.
    pub fn batch_loss(&self, xs: &[&[f64]], ys: &[f64]) -> Result<f64, NnError> {
        if xs.len() != ys.len() {
            return Err(NnError::DimMismatch { expected: xs.len(), got: ys.len() });
        }
        if xs.is_empty() {
            return Err(NnError::EmptyData);
        }
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            total += loss(self.config.loss, self.forward(x)?, y);
        }
        Ok(total / xs.len() as f64)
    }

    /// Mean batch loss and its exact gradient with respect to every parameter.
    ///
    /// ReLU'(0) and the MAE subgradient at `p == y` are taken as 0.
    pub fn backward(&self, xs: &[&[f64]], ys: &[f64]) -> Result<(f64, Gradients), NnError> {
        if xs.len() != ys.len() {
            return Err(NnError::DimMismatch { expected: xs.len(), got: ys.len() });
        }
        if xs.is_empty() {
            return Err(NnError::EmptyData);
        }
        let scale = 1.0 / xs.len() as f64;
        let mut grads = Gradients { layers: self.layers.iter().map(|l| Dense::zeros(l.in_dim, l.out_dim)).collect() };
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            self.check_dim(x)?;
            let (pre, acts) = self.forward_trace(x);
            let p = acts.last().unwrap()[0];
            total += loss(self.config.loss, p, y);
            let mut delta = vec![output_delta(self.config.loss, p, y) * scale];
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let input = &acts[l];
                let g = &mut grads.layers[l];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.bias[o] += d;
                    let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (gw, &a) in row.iter_mut().zip(input) {
                        *gw += d * a;
                    }
                }
                if l == 0 {
                    break;
                }
                let below = &pre[l - 1];
                let mut next = vec![0.0; layer.in_dim];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (n, &w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
                for (n, &z) in next.iter_mut().zip(below) {
                    if z <= 0.0 {
                        *n = 0.0;
                    }
                }
                delta = next;
            }
        }
        Ok((total * scale, grads))
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        self.layers.iter().flat_map(|l| [l.weights.len(), l.bias.len()]).collect()
    }
}

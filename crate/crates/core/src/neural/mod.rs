//! Multi-layer perceptron over the autodiff engine.
//!
//! Each layer computes `y_j = σ(Σ_i x_i W_ji + b_j)`; hidden layers use the
//! configured activation (tanh by default) and the output layer is linear.
//! Parameters live in one flat vector ordered layer by layer, weights
//! (row-major `n_out × n_in`) before biases, so the optimizer and the tape
//! see the same layout.

mod adam;
mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Block, MapOp, Real, Tape};

pub use adam::{Adam, AdamConfig};
pub use train::{contiguous_batches, train_loop, EpochControl, LossTrace};

/// Deepest network the architecture search may produce.
pub const MAX_HIDDEN_LAYERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NeuralError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("loss needs at least one sample")]
    EmptyBatch,
    #[error("non-finite gradient at parameter {index}; step refused")]
    NonFiniteGradient { index: usize },
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("cannot parse parameter text: {0}")]
    Parse(String),
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    fn map_op(self) -> MapOp {
        match self {
            Activation::Tanh => MapOp::Tanh,
            Activation::Relu => MapOp::Relu,
            Activation::Sigmoid => MapOp::Sigmoid,
        }
    }

    fn apply<R: Real>(self, x: R) -> R {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
            Activation::Sigmoid => x.sigmoid(),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        })
    }
}

impl FromStr for Activation {
    type Err = NeuralError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(NeuralError::Parse(format!("unknown activation {other:?}"))),
        }
    }
}

/// Network architecture: hidden widths between an input and a linear output.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub layer_sizes: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub hidden_activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            layer_sizes: hidden.to_vec(),
            output_dim,
            hidden_activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(NeuralError::InvalidSpec(
                "input and output dimensions must be positive".into(),
            ));
        }
        if self.layer_sizes.len() > MAX_HIDDEN_LAYERS {
            return Err(NeuralError::InvalidSpec(format!(
                "{} hidden layers exceed the maximum of {MAX_HIDDEN_LAYERS}",
                self.layer_sizes.len()
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(NeuralError::InvalidSpec("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    /// `(n_in, n_out)` of every layer including the output layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.layer_sizes.len() + 1);
        let mut n_in = self.input_dim;
        for &w in self.layer_sizes.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((n_in, w));
            n_in = w;
        }
        dims
    }

    /// Number of weight layers (hidden layers plus the output layer).
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() + 1
    }

    pub fn n_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Offset of each layer's weights in the flat parameter vector.
    pub fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::new();
        let mut off = 0;
        for (i, o) in self.layer_dims() {
            offsets.push(off);
            off += i * o + o;
        }
        offsets
    }

    /// Mask over the flat parameters that is `true` for the last `k` layers.
    pub fn trailing_layer_mask(&self, k: usize) -> Vec<bool> {
        let dims = self.layer_dims();
        let first_trainable = dims.len().saturating_sub(k);
        dims.iter()
            .enumerate()
            .flat_map(|(l, (i, o))| std::iter::repeat_n(l >= first_trainable, i * o + o))
            .collect()
    }
}

/// A network: architecture plus flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self, NeuralError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(spec.n_params());
        for (n_in, n_out) in spec.layer_dims() {
            let bound = glorot_bound(n_in, n_out);
            params.extend((0..n_in * n_out).map(|_| rng.random_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, n_out));
        }
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self, NeuralError> {
        spec.validate()?;
        let params = vec![0.0; spec.n_params()];
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self, NeuralError> {
        spec.validate()?;
        if params.len() != spec.n_params() {
            return Err(NeuralError::Dimension {
                expected: spec.n_params(),
                found: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(NeuralError::InvalidSpec("parameters must be finite".into()));
        }
        Ok(Self { spec, params })
    }

    /// Weights and biases of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (n_in, n_out) = self.spec.layer_dims()[l];
        let off = self.spec.layer_offsets()[l];
        let w = &self.params[off..off + n_in * n_out];
        let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
        (w, b)
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (n_in, n_out) = self.spec.layer_dims()[l];
        let off = self.spec.layer_offsets()[l];
        let (w, rest) = self.params[off..].split_at_mut(n_in * n_out);
        (w, &mut rest[..n_out])
    }

    /// Single-sample forward pass in plain arithmetic.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NeuralError> {
        if x.len() != self.spec.input_dim {
            return Err(NeuralError::Dimension {
                expected: self.spec.input_dim,
                found: x.len(),
            });
        }
        Ok(self.forward_batch(x))
    }

    /// Forward pass over `xs` laid out sample-major (`batch × input_dim`).
    pub fn forward_batch(&self, xs: &[f64]) -> Vec<f64> {
        let dims = self.spec.layer_dims();
        let last = dims.len() - 1;
        let batch = xs.len() / self.spec.input_dim;
        let mut cur = xs.to_vec();
        let mut off = 0;
        for (l, &(n_in, n_out)) in dims.iter().enumerate() {
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let mut next = vec![0.0; batch * n_out];
            for s in 0..batch {
                let x = &cur[s * n_in..(s + 1) * n_in];
                for o in 0..n_out {
                    let mut acc = b[o];
                    for (wi, xi) in w[o * n_in..(o + 1) * n_in].iter().zip(x) {
                        acc += wi * xi;
                    }
                    next[s * n_out + o] = if l < last {
                        self.spec.hidden_activation.apply(acc)
                    } else {
                        acc
                    };
                }
            }
            cur = next;
        }
        cur
    }

    /// Differentiable forward pass. `params` must be this network's flat
    /// parameters placed on `tape`; `inputs` is `batch × input_dim`.
    pub fn forward_tape<'t>(
        &self,
        tape: &'t Tape,
        params: Block<'t>,
        inputs: Block<'t>,
    ) -> Result<Block<'t>, NeuralError> {
        if params.len() != self.spec.n_params() {
            return Err(NeuralError::Dimension {
                expected: self.spec.n_params(),
                found: params.len(),
            });
        }
        if inputs.len() % self.spec.input_dim != 0 {
            return Err(NeuralError::Dimension {
                expected: self.spec.input_dim,
                found: inputs.len(),
            });
        }
        let dims = self.spec.layer_dims();
        let last = dims.len() - 1;
        let mut cur = inputs;
        let mut off = 0;
        for (l, &(n_in, n_out)) in dims.iter().enumerate() {
            let w = params.slice(off, n_in * n_out);
            let b = params.slice(off + n_in * n_out, n_out);
            off += n_in * n_out + n_out;
            let z = tape.dense(w, b, cur, n_in, n_out)?;
            cur = if l < last {
                tape.map(self.spec.hidden_activation.map_op(), z)
            } else {
                z
            };
        }
        Ok(cur)
    }

    /// Flat `key = value` text with layer-indexed keys; values use the
    /// shortest representation that parses back to the same bits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("input_dim = {}\n", self.spec.input_dim));
        let hidden: Vec<String> = self.spec.layer_sizes.iter().map(|h| h.to_string()).collect();
        out.push_str(&format!("hidden = {}\n", hidden.join(",")));
        out.push_str(&format!("output_dim = {}\n", self.spec.output_dim));
        out.push_str(&format!("activation = {}\n", self.spec.hidden_activation));
        for (l, (n_in, n_out)) in self.spec.layer_dims().into_iter().enumerate() {
            let (w, b) = self.layer(l);
            for o in 0..n_out {
                for i in 0..n_in {
                    out.push_str(&format!("layer{l}.weight.{o}.{i} = {:?}\n", w[o * n_in + i]));
                }
            }
            for (o, bo) in b.iter().enumerate() {
                out.push_str(&format!("layer{l}.bias.{o} = {bo:?}\n"));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, NeuralError> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| NeuralError::Parse(format!("line {}: missing '='", n + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            map.get(k)
                .ok_or_else(|| NeuralError::Parse(format!("missing key {k}")))
        };
        let parse_usize = |k: &str| -> Result<usize, NeuralError> {
            get(k)?
                .parse()
                .map_err(|e| NeuralError::Parse(format!("{k}: {e}")))
        };
        let hidden_text = get("hidden")?;
        let hidden = if hidden_text.is_empty() {
            Vec::new()
        } else {
            hidden_text
                .split(',')
                .map(|h| {
                    h.trim()
                        .parse()
                        .map_err(|e| NeuralError::Parse(format!("hidden: {e}")))
                })
                .collect::<Result<Vec<usize>, _>>()?
        };
        let spec = MlpSpec {
            input_dim: parse_usize("input_dim")?,
            layer_sizes: hidden,
            output_dim: parse_usize("output_dim")?,
            hidden_activation: get("activation")?.parse()?,
        };
        spec.validate()?;
        let mut params = Vec::with_capacity(spec.n_params());
        for (l, (n_in, n_out)) in spec.layer_dims().into_iter().enumerate() {
            let parse = |k: String| -> Result<f64, NeuralError> {
                get(&k)?
                    .parse()
                    .map_err(|e| NeuralError::Parse(format!("{k}: {e}")))
            };
            for o in 0..n_out {
                for i in 0..n_in {
                    params.push(parse(format!("layer{l}.weight.{o}.{i}"))?);
                }
            }
            for o in 0..n_out {
                params.push(parse(format!("layer{l}.bias.{o}"))?);
            }
        }
        Self::from_params(spec, params)
    }
}

impl Mlp {
    /// MSE of the network on `xs` (sample-major) against `ys` and its
    /// gradient over the flat parameters. Resets `tape`.
    pub fn mse_grad(
        &self,
        tape: &mut Tape,
        xs: &[f64],
        ys: &[f64],
    ) -> Result<(f64, Vec<f64>), NeuralError> {
        if xs.len() != ys.len() * self.spec.input_dim || self.spec.output_dim != 1 {
            return Err(NeuralError::Dimension {
                expected: ys.len() * self.spec.input_dim,
                found: xs.len(),
            });
        }
        tape.reset();
        let tape = &*tape;
        let params = tape.param_block(&self.params)?;
        let inputs = tape.constant_block(xs)?;
        let out = self.forward_tape(tape, params, inputs)?;
        let loss = mse_loss(&out.vars(), ys)?;
        let grads = tape.backward(&loss)?;
        Ok((loss.value(), grads.into_dense()))
    }

    /// Plain MSE over a regression set.
    pub fn mse(&self, xs: &[f64], ys: &[f64]) -> Result<f64, NeuralError> {
        mse_loss(&self.forward_batch(xs), ys)
    }
}

/// Fits a single-output network to `(xs, ys)` with Adam; returns the trace.
pub fn fit_regression(
    net: &mut Mlp,
    xs: &[f64],
    ys: &[f64],
    adam: AdamConfig,
    control: &EpochControl,
    mask: Option<&[bool]>,
    validation: Option<(&[f64], &[f64])>,
) -> Result<LossTrace, NeuralError> {
    let d = net.spec.input_dim;
    let mut optimizer = Adam::new(adam, net.params.len());
    let mut tape = Tape::new();
    let spec = net.spec.clone();
    let mut params = std::mem::take(&mut net.params);
    let result = train_loop(
        &mut params,
        &mut optimizer,
        mask,
        control,
        ys.len(),
        |p: &[f64], r: std::ops::Range<usize>| {
            let view = Mlp {
                spec: spec.clone(),
                params: p.to_vec(),
            };
            view.mse_grad(&mut tape, &xs[r.start * d..r.end * d], &ys[r])
        },
        |p: &[f64]| {
            validation
                .map(|(vx, vy)| {
                    let view = Mlp {
                        spec: spec.clone(),
                        params: p.to_vec(),
                    };
                    view.mse(vx, vy)
                })
                .transpose()
        },
    );
    net.params = params;
    result
}

/// Glorot-uniform half-width `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Mean squared error between predictions and fixed targets.
pub fn mse_loss<R: Real>(predictions: &[R], targets: &[f64]) -> Result<R, NeuralError> {
    if predictions.is_empty() {
        return Err(NeuralError::EmptyBatch);
    }
    if predictions.len() != targets.len() {
        return Err(NeuralError::Dimension {
            expected: predictions.len(),
            found: targets.len(),
        });
    }
    let n = predictions.len() as f64;
    let mut sum = {
        let d = predictions[0] - targets[0];
        d * d
    };
    for (p, t) in predictions.iter().zip(targets).skip(1) {
        let d = *p - *t;
        sum = sum + d * d;
    }
    Ok(sum / n)
}

/// Mean squared difference between two prediction vectors.
pub fn mse_between<R: Real>(a: &[R], b: &[R]) -> Result<R, NeuralError> {
    if a.is_empty() {
        return Err(NeuralError::EmptyBatch);
    }
    if a.len() != b.len() {
        return Err(NeuralError::Dimension {
            expected: a.len(),
            found: b.len(),
        });
    }
    let n = a.len() as f64;
    let mut sum = {
        let d = a[0] - b[0];
        d * d
    };
    for (x, y) in a.iter().zip(b).skip(1) {
        let d = *x - *y;
        sum = sum + d * d;
    }
    Ok(sum / n)
}

#[cfg(test)]
mod tests;

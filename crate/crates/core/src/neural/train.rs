use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, NeuralError};

/// Epoch budget and batching for [`train_loop`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochControl {
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the batch visiting order.
    pub seed: u64,
}

/// Per-epoch mean training loss and, when a validation closure is given,
/// validation loss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
}

impl LossTrace {
    pub fn last_validation(&self) -> Option<f64> {
        self.validation.last().copied()
    }
}

/// Splits `0..n` into contiguous batches of `batch_size` (the last may be
/// shorter) and returns them in an order fixed by `seed`. Days inside a batch
/// keep their temporal order.
pub fn contiguous_batches(n: usize, batch_size: usize, seed: u64) -> Vec<Range<usize>> {
    let size = batch_size.max(1);
    let mut batches: Vec<Range<usize>> = (0..n)
        .step_by(size)
        .map(|s| s..(s + size).min(n))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    batches.shuffle(&mut rng);
    batches
}

/// Generic mini-batch loop.
///
/// `batch_grad` returns the batch loss and the gradient over `params`;
/// `validate` returns the current validation loss, if any. The batch order is
/// drawn once per seed and reused every epoch. A non-finite loss aborts with
/// the epoch index.
pub fn train_loop<E, G, V>(
    params: &mut [f64],
    optimizer: &mut Adam,
    mask: Option<&[bool]>,
    control: &EpochControl,
    n_samples: usize,
    mut batch_grad: G,
    mut validate: V,
) -> Result<LossTrace, E>
where
    E: From<NeuralError>,
    G: FnMut(&[f64], Range<usize>) -> Result<(f64, Vec<f64>), E>,
    V: FnMut(&[f64]) -> Result<Option<f64>, E>,
{
    let mut trace = LossTrace::default();
    if control.epochs == 0 {
        return Ok(trace);
    }
    if n_samples == 0 {
        return Err(NeuralError::EmptyBatch.into());
    }
    let batches = contiguous_batches(n_samples, control.batch_size, control.seed);
    for epoch in 1..=control.epochs {
        let mut weighted = 0.0;
        for batch in &batches {
            let (loss, grads) = batch_grad(params, batch.clone())?;
            if !loss.is_finite() {
                return Err(NeuralError::Diverged { epoch, loss }.into());
            }
            weighted += loss * batch.len() as f64;
            optimizer.step(params, &grads, mask).map_err(|e| match e {
                NeuralError::NonFiniteGradient { .. } => NeuralError::Diverged { epoch, loss },
                other => other,
            })?;
        }
        trace.train.push(weighted / n_samples as f64);
        if let Some(v) = validate(params)? {
            if !v.is_finite() {
                return Err(NeuralError::Diverged { epoch, loss: v }.into());
            }
            trace.validation.push(v);
        }
    }
    Ok(trace)
}

//! Physics embedding: parameter net → process model → residual net, all on
//! one tape so both networks learn through the model's recurrence.

use crate::autodiff::{Block, Tape, Var};
use crate::data::SiteDataset;
use crate::neural::{
    mse_between, mse_loss, train_loop, Adam, AdamConfig, EpochControl, LossTrace,
};
use crate::process_model::{
    simulate_varying, step_day, DriverRecord, ModelOutput, ModelState, PrelesParams, ProcessError,
    N_PARAMS,
};

use super::{CoupledModel, CouplingError, HyperParams, TrainingData, N_PM_FEATURES};

/// Start-of-day states and outputs with one parameter vector per day,
/// starting from the default initial state of the first day's parameters.
pub(super) fn trace_varying(
    params: &[PrelesParams],
    drivers: &[DriverRecord],
) -> Result<Vec<(ModelState, ModelOutput)>, ProcessError> {
    let first = drivers.first().ok_or(ProcessError::EmptyDrivers)?;
    let mut state = ModelState::initial(&params[0], first);
    let mut out = Vec::with_capacity(drivers.len());
    for (day, (d, p)) in drivers.iter().zip(params).enumerate() {
        let step = step_day(d, &state, p);
        let o = step.output;
        if ![o.gpp, o.et, o.soil_water].iter().all(|v| v.is_finite()) {
            return Err(ProcessError::NonFinite {
                day,
                quantity: "embedded process-model output",
            });
        }
        out.push((state, o));
        state = step.next;
    }
    Ok(out)
}

/// Builds predictions and the embedded model's GPP for `drivers` on `tape`.
/// `start` is a detached state at the first day; `None` starts from the
/// default initial state of the first day's (differentiable) parameters.
pub(super) fn chunk_on_tape<'t>(
    model: &CoupledModel,
    tape: &'t Tape,
    param_net: Block<'t>,
    residual_net: Block<'t>,
    drivers: &[DriverRecord],
    start: Option<&ModelState>,
) -> Result<(Vec<Var<'t>>, Vec<Var<'t>>), CouplingError> {
    let e = model.embedding.as_ref().expect("embedding model");
    let stats = model
        .scaler
        .pm_outputs
        .as_ref()
        .expect("embedding has output statistics");
    let mut feats = Vec::with_capacity(drivers.len() * super::N_FEATURES);
    for d in drivers {
        feats.extend(model.scaler.features(d)?);
    }
    let x = tape.constant_block(&feats)?;
    let raw = e.param_net.forward_tape(tape, param_net, x)?;
    let params: Vec<PrelesParams<Var<'t>>> = (0..drivers.len())
        .map(|k| {
            let arr: [Var<'t>; N_PARAMS] = std::array::from_fn(|j| raw.var(k * N_PARAMS + j));
            e.prior.squash(&arr)
        })
        .collect();
    let init = match start {
        Some(s) => ModelState {
            soil_water: tape.constant(s.soil_water),
            surface_water: tape.constant(s.surface_water),
            snow: tape.constant(s.snow),
            acclim: tape.constant(s.acclim),
        },
        None => ModelState::initial(&params[0], &drivers[0]),
    };
    let outs = simulate_varying(&params, drivers, init)?;
    let mut z = Vec::with_capacity(drivers.len() * N_PM_FEATURES);
    for o in &outs {
        z.push((o.gpp - stats.mean[0]) / stats.std[0]);
        z.push((o.et - stats.mean[1]) / stats.std[1]);
        z.push((o.soil_water - stats.mean[2]) / stats.std[2]);
    }
    let zin = tape.stack(&z);
    let yhat = e.residual_net.forward_tape(tape, residual_net, zin)?.vars();
    let phy = outs.iter().map(|o| o.gpp).collect();
    if let Some(err) = tape.first_error() {
        return Err(err.into());
    }
    Ok((yhat, phy))
}

/// Whole-site pass from the default initial state.
pub(super) fn sequence_on_tape<'t>(
    model: &CoupledModel,
    tape: &'t Tape,
    param_net: Block<'t>,
    residual_net: Block<'t>,
    site: &SiteDataset,
) -> Result<(Vec<Var<'t>>, Vec<Var<'t>>), CouplingError> {
    chunk_on_tape(model, tape, param_net, residual_net, &site.drivers(), None)
}

/// Contiguous runs of consecutive indices, each cut into pieces of at most
/// `size` days: `(site, start, end)`.
fn chunks(train: &[Vec<usize>], size: usize) -> Vec<(usize, usize, usize)> {
    let size = size.max(1);
    let mut out = Vec::new();
    for (s, idx) in train.iter().enumerate() {
        let mut k = 0;
        while k < idx.len() {
            let start = idx[k];
            let mut end = start + 1;
            k += 1;
            while k < idx.len() && idx[k] == end && end - start < size {
                end += 1;
                k += 1;
            }
            out.push((s, start, end));
        }
    }
    out
}

fn set_params(model: &mut CoupledModel, p: &[f64]) {
    let e = model.embedding.as_mut().expect("embedding model");
    let n = e.param_net.params.len();
    e.param_net.params.copy_from_slice(&p[..n]);
    e.residual_net.params.copy_from_slice(&p[n..]);
}

/// Trains both networks jointly. Each batch is a contiguous chunk of
/// training days; the state entering a chunk is taken from a detached
/// whole-site run of the current model, refreshed every epoch.
pub(super) fn train_embedding(
    model: &mut CoupledModel,
    data: &TrainingData<'_>,
    hyper: &HyperParams,
    epochs: usize,
    seed: u64,
) -> Result<LossTrace, CouplingError> {
    let lambda = model.lambda.expect("validated");
    let pieces = chunks(&data.train, hyper.batch_size);
    let drivers: Vec<Vec<DriverRecord>> = data.sites.iter().map(|s| s.drivers()).collect();
    let targets: Vec<Vec<f64>> = data.sites.iter().map(|s| s.targets()).collect();
    let e = model.embedding.as_ref().expect("embedding model");
    let mut params: Vec<f64> = e
        .param_net
        .params
        .iter()
        .chain(&e.residual_net.params)
        .copied()
        .collect();
    let n_param_net = e.param_net.params.len();
    let mut optimizer = Adam::new(AdamConfig::with_learning_rate(hyper.learning_rate), params.len());
    let control = EpochControl {
        epochs,
        batch_size: 1,
        seed,
    };

    let mut grad_model = model.clone();
    let mut val_model = model.clone();
    let mut tape = Tape::new();
    let mut states: Vec<Vec<ModelState>> = Vec::new();
    let mut calls = 0usize;
    let n_pieces = pieces.len();

    let trace = train_loop(
        &mut params,
        &mut optimizer,
        None,
        &control,
        n_pieces,
        |p: &[f64], r: std::ops::Range<usize>| -> Result<(f64, Vec<f64>), CouplingError> {
            set_params(&mut grad_model, p);
            if calls % n_pieces == 0 {
                states = drivers
                    .iter()
                    .zip(&data.train)
                    .map(|(d, idx)| {
                        if idx.is_empty() {
                            return Ok(Vec::new());
                        }
                        Ok(grad_model
                            .pm_trace(d)?
                            .expect("embedding has a PM")
                            .into_iter()
                            .map(|(s, _)| s)
                            .collect())
                    })
                    .collect::<Result<_, CouplingError>>()?;
            }
            calls += 1;
            let (s, start, end) = pieces[r.start];
            tape.reset();
            let tape = &tape;
            let pn = tape.param_block(&p[..n_param_net])?;
            let rn = tape.param_block(&p[n_param_net..])?;
            let (yhat, phy) = chunk_on_tape(
                &grad_model,
                tape,
                pn,
                rn,
                &drivers[s][start..end],
                Some(&states[s][start]),
            )?;
            let y = &targets[s][start..end];
            let loss = mse_loss(&yhat, y)? + mse_between(&phy, &yhat)? * lambda;
            let grads = tape.backward(&loss)?;
            Ok((loss.value(), grads.into_dense()))
        },
        |p: &[f64]| -> Result<Option<f64>, CouplingError> {
            if data.n_validation() == 0 {
                return Ok(None);
            }
            set_params(&mut val_model, p);
            let mut sq = 0.0;
            for (s, idx) in data.validation.iter().enumerate() {
                if idx.is_empty() {
                    continue;
                }
                let pred = val_model.predict(&drivers[s])?;
                sq += idx.iter().map(|&i| (pred[i] - targets[s][i]).powi(2)).sum::<f64>();
            }
            Ok(Some(sq / data.n_validation() as f64))
        },
    )?;
    set_params(model, &params);
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::chunks;

    #[test]
    fn chunks_follow_runs_and_size() {
        let train = vec![vec![0, 1, 2, 3, 4, 7, 8], vec![], vec![2, 3]];
        assert_eq!(
            chunks(&train, 2),
            vec![(0, 0, 2), (0, 2, 4), (0, 4, 5), (0, 7, 9), (2, 2, 4)]
        );
        assert_eq!(chunks(&train, 64), vec![(0, 0, 5), (0, 7, 9), (2, 2, 4)]);
    }
}

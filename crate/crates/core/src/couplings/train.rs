use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::SiteDataset;
use crate::neural::{mse_loss, train_loop, Adam, AdamConfig, EpochControl, LossTrace, Mlp};
use crate::process_model::ModelOutput;

use super::{
    embedding, features_for, parallel_loss, regularised_loss, run_pm, CoupledModel, CouplingError,
    CouplingKind, TrainingData,
};

/// Optimizer settings of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Regularisation weight; only meaningful for regularised kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), CouplingError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CouplingError::Invalid(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(CouplingError::Invalid("batch size must be >= 1".into()));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l <= 1.0) {
                return Err(CouplingError::Invalid(format!("lambda {l} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Network inputs, targets and process-model GPP of a set of records,
/// flattened site by site in day order.
struct Samples {
    dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    phy: Vec<f64>,
}

impl Samples {
    fn len(&self) -> usize {
        self.y.len()
    }
}

fn build_samples(
    model: &CoupledModel,
    sites: &[SiteDataset],
    pm_cache: &[Option<Vec<ModelOutput>>],
    indices: &[Vec<usize>],
) -> Result<Samples, CouplingError> {
    let dim = model.kind.feature_len();
    let mut s = Samples {
        dim,
        x: Vec::new(),
        y: Vec::new(),
        phy: Vec::new(),
    };
    for ((site, idx), pm) in sites.iter().zip(indices).zip(pm_cache) {
        for &i in idx {
            let r = &site.records[i];
            let out = pm.as_ref().map(|o| &o[i]);
            let pm_input = if model.kind == CouplingKind::BiasCorrection {
                out
            } else {
                None
            };
            s.x.extend(features_for(model.kind, &model.scaler, &r.driver, pm_input)?);
            s.y.push(r.gpp);
            s.phy.push(out.map_or(0.0, |o| o.gpp));
        }
    }
    Ok(s)
}

/// Trains the model's network parts on the training records of `data` for
/// `epochs` epochs and returns the per-epoch losses. The validation loss is
/// the plain MSE of the model's prediction. Process-only models have nothing
/// to train. Domain adaptation re-fits only its last layers (see
/// [`finetune`]).
pub fn train_model(
    model: &mut CoupledModel,
    data: &TrainingData<'_>,
    hyper: &HyperParams,
    epochs: usize,
    seed: u64,
) -> Result<LossTrace, CouplingError> {
    hyper.validate()?;
    data.check()?;
    if model.kind.uses_lambda() {
        if let Some(l) = hyper.lambda {
            model.lambda = Some(l);
        }
    }
    model.validate()?;
    match model.kind {
        CouplingKind::ProcessOnly => Ok(LossTrace::default()),
        CouplingKind::PhysicsEmbedding => {
            embedding::train_embedding(model, data, hyper, epochs, seed)
        }
        CouplingKind::DomainAdaptation => {
            let net = model.net.as_ref().expect("validated");
            let k = model.finetune_layers.expect("validated");
            if k == 0 || k >= net.spec.depth() {
                return Err(CouplingError::Invalid(format!(
                    "fine-tuning {k} of {} layers; need 1 <= k < depth",
                    net.spec.depth()
                )));
            }
            let mask = net.spec.trailing_layer_mask(k);
            fit_fixed(model, data, hyper, epochs, seed, Some(&mask))
        }
        _ => fit_fixed(model, data, hyper, epochs, seed, None),
    }
}

fn fit_fixed(
    model: &mut CoupledModel,
    data: &TrainingData<'_>,
    hyper: &HyperParams,
    epochs: usize,
    seed: u64,
    mask: Option<&[bool]>,
) -> Result<LossTrace, CouplingError> {
    let pm_cache: Vec<Option<Vec<ModelOutput>>> = match &model.pm_params {
        Some(p) => data
            .sites
            .iter()
            .zip(data.train.iter().zip(&data.validation))
            .map(|(site, (tr, va))| {
                if tr.is_empty() && va.is_empty() {
                    Ok(None)
                } else {
                    run_pm(p, &site.drivers()).map(Some)
                }
            })
            .collect::<Result<_, CouplingError>>()?,
        None => vec![None; data.sites.len()],
    };
    let train = build_samples(model, data.sites, &pm_cache, &data.train)?;
    let val = build_samples(model, data.sites, &pm_cache, &data.validation)?;
    fit_samples(model, &train, Some(&val), hyper, epochs, seed, mask)
}

fn fit_samples(
    model: &mut CoupledModel,
    train: &Samples,
    val: Option<&Samples>,
    hyper: &HyperParams,
    epochs: usize,
    seed: u64,
    mask: Option<&[bool]>,
) -> Result<LossTrace, CouplingError> {
    let kind = model.kind;
    let lambda = model.lambda;
    let net = model.net.as_mut().expect("fixed-PM kinds carry a network");
    let shape = Mlp {
        spec: net.spec.clone(),
        params: Vec::new(),
    };
    let mut optimizer = Adam::new(AdamConfig::with_learning_rate(hyper.learning_rate), net.params.len());
    let control = EpochControl {
        epochs,
        batch_size: hyper.batch_size,
        seed,
    };
    let d = train.dim;
    let mut tape = Tape::new();
    let mut params = std::mem::take(&mut net.params);
    let result = train_loop(
        &mut params,
        &mut optimizer,
        mask,
        &control,
        train.len(),
        |p: &[f64], r: std::ops::Range<usize>| -> Result<(f64, Vec<f64>), CouplingError> {
            tape.reset();
            let tape = &tape;
            let pb = tape.param_block(p)?;
            let xb = tape.constant_block(&train.x[r.start * d..r.end * d])?;
            let out = shape.forward_tape(tape, pb, xb)?.vars();
            let y = &train.y[r.clone()];
            let phy = &train.phy[r];
            let loss = match kind {
                CouplingKind::ParallelPhysics => parallel_loss(y, &out, phy)?,
                CouplingKind::PhysicsRegularisation => {
                    regularised_loss(y, &out, phy, lambda.expect("validated"))?
                }
                _ => mse_loss(&out, y)?,
            };
            let grads = tape.backward(&loss)?;
            Ok((loss.value(), grads.into_dense()))
        },
        |p: &[f64]| -> Result<Option<f64>, CouplingError> {
            let Some(v) = val.filter(|v| v.len() > 0) else {
                return Ok(None);
            };
            let view = Mlp {
                spec: shape.spec.clone(),
                params: p.to_vec(),
            };
            let mut out = view.forward_batch(&v.x);
            if kind == CouplingKind::ParallelPhysics {
                out.iter_mut().zip(&v.phy).for_each(|(o, p)| *o += p);
            }
            Ok(Some(mse_loss(&out, &v.y)?))
        },
    );
    net.params = params;
    result
}

/// Trains the whole domain-adaptation network on simulated records,
/// normalized with the model's (observed-data) statistics.
pub fn pretrain(
    model: &mut CoupledModel,
    simulated: &SiteDataset,
    hyper: &HyperParams,
    epochs: usize,
    seed: u64,
) -> Result<LossTrace, CouplingError> {
    if model.kind != CouplingKind::DomainAdaptation {
        return Err(CouplingError::Invalid(format!(
            "pretraining applies to domain adaptation, not {}",
            model.kind
        )));
    }
    hyper.validate()?;
    let all = vec![(0..simulated.len()).collect::<Vec<_>>()];
    let samples = build_samples(model, std::slice::from_ref(simulated), &[None], &all)?;
    fit_samples(model, &samples, None, hyper, epochs, seed, None)
}

/// Re-fits the last `finetune_layers` layers on observed training records;
/// earlier layers stay bit-identical.
pub fn finetune(
    model: &mut CoupledModel,
    data: &TrainingData<'_>,
    hyper: &HyperParams,
    epochs: usize,
    seed: u64,
) -> Result<LossTrace, CouplingError> {
    if model.kind != CouplingKind::DomainAdaptation {
        return Err(CouplingError::Invalid(format!(
            "fine-tuning applies to domain adaptation, not {}",
            model.kind
        )));
    }
    train_model(model, data, hyper, epochs, seed)
}

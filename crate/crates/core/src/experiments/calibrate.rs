use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{ParameterPrior, SiteDataset};
use crate::neural::{mse_loss, Adam, AdamConfig};
use crate::process_model::{simulate, ModelState, PrelesParams, N_PARAMS};

use super::ExperimentError;

/// Gradient calibration of the process model (a cheap stand-in for a full
/// Bayesian calibration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Parameters are kept inside this box; collapsed entries stay fixed.
    #[serde(default = "ParameterPrior::wide")]
    pub prior: ParameterPrior,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            learning_rate: 1e-2,
            prior: ParameterPrior::wide(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: PrelesParams,
    /// Loss before each step, then the final loss.
    pub losses: Vec<f64>,
}

/// Full-batch Adam on `MSE(y, PM gpp)` over the indexed records. Steps are
/// taken in box-relative coordinates so every parameter moves on the same
/// scale, and the result is projected back into the box after each step.
pub fn calibrate_pm_gradient(
    sites: &[SiteDataset],
    indices: &[Vec<usize>],
    initial: &PrelesParams,
    config: &CalibrationConfig,
) -> Result<Calibration, ExperimentError> {
    config.prior.validate()?;
    initial.validate()?;
    if indices.len() != sites.len() || indices.iter().all(Vec::is_empty) {
        return Err(ExperimentError::Invalid("calibration needs training records".into()));
    }
    if !(config.learning_rate > 0.0) {
        return Err(ExperimentError::Invalid("calibration learning rate must be positive".into()));
    }
    let lo = config.prior.lo.to_array();
    let hi = config.prior.hi.to_array();
    let free: Vec<bool> = (0..N_PARAMS).map(|k| hi[k] > lo[k]).collect();
    // Parameters are the master copy so that a zero step leaves them
    // bit-identical; Adam works on box-relative coordinates.
    let mut p = config.prior.project(initial).to_array();
    let mut optimizer = Adam::new(AdamConfig::with_learning_rate(config.learning_rate), N_PARAMS);
    let drivers: Vec<_> = sites.iter().map(|s| s.drivers()).collect();
    let mut tape = Tape::new();
    let mut losses = Vec::with_capacity(config.steps + 1);
    for step in 0..=config.steps {
        tape.reset();
        let t = &tape;
        let leaves = t.param_block(&p)?;
        let pv = PrelesParams::from_slice(&leaves.vars()).expect("13 leaves");
        let mut preds = Vec::new();
        let mut targets = Vec::new();
        for ((site, d), idx) in sites.iter().zip(&drivers).zip(indices) {
            if idx.is_empty() {
                continue;
            }
            let out = simulate(&pv, d, ModelState::initial(&pv, &d[0]))?;
            for &i in idx {
                preds.push(out[i].gpp);
                targets.push(site.records[i].gpp);
            }
        }
        let loss = mse_loss(&preds, &targets)?;
        if !loss.value().is_finite() {
            return Err(ExperimentError::Invalid(format!(
                "calibration diverged at step {step}"
            )));
        }
        losses.push(loss.value());
        if step == config.steps {
            break;
        }
        let g = tape.backward(&loss)?;
        let grads: Vec<f64> = (0..N_PARAMS).map(|k| g.dense()[k] * (hi[k] - lo[k])).collect();
        let before = config.prior.to_unit(&PrelesParams::from_array(p));
        let mut u = before.to_vec();
        optimizer
            .step(&mut u, &grads, Some(&free))
            .map_err(|e| ExperimentError::Invalid(format!("calibration step {step}: {e}")))?;
        for k in 0..N_PARAMS {
            if free[k] && u[k] != before[k] {
                p[k] = (lo[k] + u[k].clamp(0.0, 1.0) * (hi[k] - lo[k])).clamp(lo[k], hi[k]);
            }
        }
    }
    Ok(Calibration {
        params: PrelesParams::from_array(p),
        losses,
    })
}

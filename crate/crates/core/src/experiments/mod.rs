//! Cross-validation splits, the candidate search, evaluation and the
//! scenario runner.

mod calibrate;
mod report;
mod search;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AdError;
use crate::couplings::{
    finetune, pretrain, train_model, CoupledModel, CouplingError, CouplingKind, HyperParams,
    ModelConfig, TrainingData,
};
use crate::data::{DataError, SiteDataset};
use crate::neural::{Activation, LossTrace, NeuralError};
use crate::process_model::{PrelesParams, ProcessError};

pub use calibrate::{calibrate_pm_gradient, Calibration, CalibrationConfig};
pub use report::{
    run_experiment, Density, ExperimentConfig, FoldResult, PretrainConfig, Report, ReportRow, Scenario,
    Spatial, EXPERIMENT_VERSION,
};
pub use search::{
    evaluate_candidates, random_search, sample_candidates, Architecture, Candidate, CandidateResult,
    SearchResult, SearchSpace,
};

/// Epochs of a full training run.
pub const DEFAULT_EPOCHS: usize = 5000;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("every search candidate failed")]
    AllFailed,
    #[error("{context}")]
    Context {
        context: String,
        #[source]
        source: Box<ExperimentError>,
    },
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    pub fn context(self, context: impl Into<String>) -> Self {
        ExperimentError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

/// `(mean² + population std) / 2` of the fold validation losses.
pub fn selection_index(losses: &[f64]) -> Result<f64, ExperimentError> {
    if losses.is_empty() {
        return Err(ExperimentError::Invalid("selection index of no losses".into()));
    }
    if losses.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(ExperimentError::Invalid("losses must be finite and >= 0".into()));
    }
    let (mean, std) = mean_std(losses);
    Ok((mean * mean + std) / 2.0)
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Derives an independent child seed for a named stream; all randomness of
/// a run descends from one user seed this way.
pub fn child_seed(seed: u64, stream: &str, index: u64) -> u64 {
    // FNV-1a over the stream name, then two rounds of splitmix64.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    mix(mix(seed ^ h) ^ index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitScheme {
    TemporalBlocked,
    LeaveSiteOut,
}

/// Per-site record indices used for training and validation in one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<Vec<usize>>,
    pub validation: Vec<Vec<usize>>,
    /// Year or site id that is validated on.
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub scheme: SplitScheme,
    pub folds: Vec<Fold>,
    pub test: Vec<Vec<usize>>,
    pub test_label: String,
}

impl SplitPlan {
    pub fn training_data<'a>(&self, sites: &'a [SiteDataset], fold: usize) -> TrainingData<'a> {
        let f = &self.folds[fold];
        TrainingData {
            sites,
            train: f.train.clone(),
            validation: f.validation.clone(),
        }
    }

    /// Every non-test record as training data, without validation.
    pub fn final_training_data<'a>(&self, sites: &'a [SiteDataset]) -> TrainingData<'a> {
        let train = sites
            .iter()
            .zip(&self.test)
            .map(|(s, test)| {
                let t: BTreeSet<usize> = test.iter().copied().collect();
                (0..s.len()).filter(|i| !t.contains(i)).collect()
            })
            .collect();
        TrainingData {
            sites,
            train,
            validation: sites.iter().map(|_| Vec::new()).collect(),
        }
    }

    /// Checks train, validation and test are pairwise disjoint per site.
    pub fn check_disjoint(&self) -> Result<(), ExperimentError> {
        for f in &self.folds {
            for (s, ((tr, va), te)) in f.train.iter().zip(&f.validation).zip(&self.test).enumerate() {
                let mut seen = BTreeSet::new();
                for i in tr.iter().chain(va).chain(te) {
                    if !seen.insert(*i) {
                        return Err(ExperimentError::Invalid(format!(
                            "fold {}: record {i} of site {s} used twice",
                            f.label
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Holds out the last calendar year as test and splits the remaining years
/// into `n_folds >= 2` contiguous blocks, each validated on once.
pub fn temporal_block_split(sites: &[SiteDataset], n_folds: usize) -> Result<SplitPlan, ExperimentError> {
    let years: Vec<i32> = sites
        .iter()
        .flat_map(|s| s.years())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if n_folds < 2 {
        // One block would validate on every non-test year, leaving no
        // training years.
        return Err(ExperimentError::Invalid(format!(
            "temporal cross-validation needs at least 2 folds, got {n_folds}"
        )));
    }
    if years.len() < n_folds + 1 {
        return Err(ExperimentError::Invalid(format!(
            "{} folds need at least {} years, found {}",
            n_folds,
            n_folds + 1,
            years.len()
        )));
    }
    let (rest, test_year) = years.split_at(years.len() - 1);
    let test_year = test_year[0];
    let in_years = |s: &SiteDataset, ys: &[i32]| -> Vec<usize> {
        s.records
            .iter()
            .enumerate()
            .filter(|(_, r)| ys.contains(&chrono::Datelike::year(&r.date)))
            .map(|(i, _)| i)
            .collect()
    };
    let m = rest.len();
    let mut folds = Vec::with_capacity(n_folds);
    for k in 0..n_folds {
        let block = &rest[k * m / n_folds..(k + 1) * m / n_folds];
        let others: Vec<i32> = rest.iter().copied().filter(|y| !block.contains(y)).collect();
        folds.push(Fold {
            train: sites.iter().map(|s| in_years(s, &others)).collect(),
            validation: sites.iter().map(|s| in_years(s, block)).collect(),
            label: block.iter().map(i32::to_string).collect::<Vec<_>>().join("-"),
        });
    }
    Ok(SplitPlan {
        scheme: SplitScheme::TemporalBlocked,
        folds,
        test: sites.iter().map(|s| in_years(s, &[test_year])).collect(),
        test_label: test_year.to_string(),
    })
}

/// Holds out site `test_site` as test; each remaining site is validated on
/// once while the others train.
pub fn leave_site_out_split(sites: &[SiteDataset], test_site: usize) -> Result<SplitPlan, ExperimentError> {
    if sites.len() < 3 {
        return Err(ExperimentError::Invalid(format!(
            "leave-site-out needs at least 3 sites, found {}",
            sites.len()
        )));
    }
    if test_site >= sites.len() {
        return Err(ExperimentError::Invalid(format!("no site {test_site}")));
    }
    let all = |s: &SiteDataset| (0..s.len()).collect::<Vec<_>>();
    let folds = (0..sites.len())
        .filter(|&v| v != test_site)
        .map(|v| Fold {
            train: sites
                .iter()
                .enumerate()
                .map(|(i, s)| if i == v || i == test_site { Vec::new() } else { all(s) })
                .collect(),
            validation: sites
                .iter()
                .enumerate()
                .map(|(i, s)| if i == v { all(s) } else { Vec::new() })
                .collect(),
            label: sites[v].site_id.clone(),
        })
        .collect();
    Ok(SplitPlan {
        scheme: SplitScheme::LeaveSiteOut,
        folds,
        test: sites
            .iter()
            .enumerate()
            .map(|(i, s)| if i == test_site { all(s) } else { Vec::new() })
            .collect(),
        test_label: sites[test_site].site_id.clone(),
    })
}

/// Settings shared by every training run of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "one")]
    pub finetune_layers: usize,
    #[serde(default)]
    pub pm_params: PrelesParams,
    /// Simulated data for domain-adaptation pretraining.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretraining: Option<SiteDataset>,
    #[serde(default)]
    pub pretrain_epochs: usize,
}

fn one() -> usize {
    1
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            activation: Activation::Tanh,
            finetune_layers: 1,
            pm_params: PrelesParams::default(),
            pretraining: None,
            pretrain_epochs: 0,
        }
    }
}

/// Builds and trains one model. Domain adaptation is pretrained on the
/// simulated set first and then fine-tuned on `data`.
pub fn fit_model(
    kind: CouplingKind,
    hidden: &[usize],
    hyper: &HyperParams,
    settings: &TrainSettings,
    data: &TrainingData<'_>,
    seed: u64,
) -> Result<(CoupledModel, LossTrace), ExperimentError> {
    let config = ModelConfig {
        activation: settings.activation,
        lambda: hyper.lambda,
        finetune_layers: settings.finetune_layers,
        pm_params: settings.pm_params,
        ..ModelConfig::new(hidden)
    };
    let mut model = CoupledModel::build(kind, &config, data, child_seed(seed, "init", 0))?;
    let train_seed = child_seed(seed, "batches", 0);
    let trace = if kind == CouplingKind::DomainAdaptation {
        let sim = settings.pretraining.as_ref().ok_or_else(|| {
            ExperimentError::Invalid("domain adaptation needs a pretraining set".into())
        })?;
        pretrain(&mut model, sim, hyper, settings.pretrain_epochs, child_seed(seed, "pretrain", 0))?;
        finetune(&mut model, data, hyper, settings.epochs, train_seed)?
    } else {
        train_model(&mut model, data, hyper, settings.epochs, train_seed)?
    };
    Ok((model, trace))
}

/// Mean absolute error of the model over the indexed records. Each site's
/// full driver sequence is simulated so process-model state is carried
/// into the evaluated days.
pub fn evaluate_mae(
    model: &CoupledModel,
    sites: &[SiteDataset],
    indices: &[Vec<usize>],
) -> Result<f64, ExperimentError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (site, idx) in sites.iter().zip(indices) {
        if idx.is_empty() {
            continue;
        }
        let pred = model.predict(&site.drivers())?;
        for &i in idx {
            sum += (pred[i] - site.records[i].gpp).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(ExperimentError::Invalid("empty evaluation split".into()));
    }
    Ok(sum / n as f64)
}

/// Plain MAE between two series.
pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64, ExperimentError> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(ExperimentError::Invalid(format!(
            "mae of {} predictions against {} targets",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred.iter().zip(target).map(|(p, y)| (p - y).abs()).sum::<f64>() / pred.len() as f64)
}

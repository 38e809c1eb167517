use serde::{Deserialize, Serialize};

use crate::couplings::{CoupledModel, CouplingKind, HyperParams};
use crate::data::{generate_pretraining_set, thin_weekly, ParameterPrior, SiteDataset, WeatherSimConfig};
use crate::neural::{Activation, LossTrace};
use crate::process_model::PrelesParams;

use super::{
    calibrate_pm_gradient, child_seed, evaluate_mae, fit_model, leave_site_out_split, mean_std,
    random_search, temporal_block_split, CalibrationConfig, Candidate, ExperimentError, SearchSpace,
    SplitPlan, TrainSettings, DEFAULT_EPOCHS,
};

/// Current experiment config and report format.
pub const EXPERIMENT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spatial {
    /// Future years at the training sites.
    OnSite,
    /// Sites never seen in training.
    MultiSite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Density {
    Full,
    /// Every seventh day only.
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub spatial: Spatial,
    pub density: Density,
}

impl Scenario {
    pub fn label(&self) -> String {
        let s = match self.spatial {
            Spatial::OnSite => "on-site",
            Spatial::MultiSite => "multi-site",
        };
        let d = match self.density {
            Density::Full => "full",
            Density::Sparse => "sparse",
        };
        format!("{s}/{d}")
    }
}

/// Simulated pretraining data for domain adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub n_samples: usize,
    pub days: usize,
    pub epochs: usize,
    #[serde(default = "ParameterPrior::narrow")]
    pub prior: ParameterPrior,
    #[serde(default)]
    pub weather: WeatherSimConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            n_samples: 16,
            days: 365,
            epochs: 200,
            prior: ParameterPrior::narrow(),
            weather: WeatherSimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub version: u32,
    pub kinds: Vec<CouplingKind>,
    pub scenario: Scenario,
    /// Temporal folds; defaults to one per non-test year.
    #[serde(default)]
    pub n_folds: Option<usize>,
    /// Held-out site for the multi-site scenario; defaults to the last.
    #[serde(default)]
    pub test_site: Option<usize>,
    /// Search candidates per kind; 0 trains `hidden` and `hyper` directly.
    pub budget: usize,
    #[serde(default)]
    pub search: SearchSpace,
    pub hidden: Vec<usize>,
    pub hyper: HyperParams,
    pub epochs: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "one")]
    pub finetune_layers: usize,
    #[serde(default)]
    pub pm_params: PrelesParams,
    #[serde(default)]
    pub pretraining: Option<PretrainConfig>,
    /// Gradient calibration of the process model on each fold first.
    #[serde(default)]
    pub calibration: Option<CalibrationConfig>,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: EXPERIMENT_VERSION,
            kinds: CouplingKind::ALL.to_vec(),
            scenario: Scenario {
                spatial: Spatial::OnSite,
                density: Density::Full,
            },
            n_folds: None,
            test_site: None,
            budget: 0,
            search: SearchSpace::default(),
            hidden: vec![32, 32],
            hyper: HyperParams {
                learning_rate: 1e-3,
                batch_size: 32,
                lambda: None,
            },
            epochs: DEFAULT_EPOCHS,
            activation: Activation::Tanh,
            finetune_layers: 1,
            pm_params: PrelesParams::default(),
            pretraining: Some(PretrainConfig::default()),
            calibration: None,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.version != EXPERIMENT_VERSION {
            return Err(ExperimentError::Invalid(format!(
                "unsupported experiment config version {}",
                self.version
            )));
        }
        if self.kinds.is_empty() {
            return Err(ExperimentError::Invalid("no coupling kinds requested".into()));
        }
        self.hyper.validate()?;
        if self.budget > 0 {
            self.search.validate()?;
        }
        self.pm_params.validate()?;
        Ok(())
    }

    /// Simulated pretraining set, generated only when domain adaptation is
    /// among the requested kinds.
    pub fn pretraining_set(&self) -> Result<Option<SiteDataset>, ExperimentError> {
        match (&self.pretraining, self.kinds.contains(&CouplingKind::DomainAdaptation)) {
            (Some(p), true) => {
                let weather = WeatherSimConfig {
                    seed: child_seed(self.seed, "pretraining-weather", 0),
                    ..p.weather.clone()
                };
                Ok(Some(generate_pretraining_set(&p.prior, &weather, p.n_samples, p.days)?))
            }
            _ => Ok(None),
        }
    }

    pub fn train_settings(&self, pretraining: Option<&SiteDataset>) -> TrainSettings {
        TrainSettings {
            epochs: self.epochs,
            activation: self.activation,
            finetune_layers: self.finetune_layers,
            pm_params: self.pm_params,
            pretraining: pretraining.cloned(),
            pretrain_epochs: self.pretraining.as_ref().map_or(0, |p| p.epochs),
        }
    }

    /// Applies the scenario's thinning.
    pub fn prepare_sites(&self, sites: &[SiteDataset]) -> Vec<SiteDataset> {
        match self.scenario.density {
            Density::Full => sites.to_vec(),
            Density::Sparse => sites.iter().map(thin_weekly).collect(),
        }
    }

    pub fn split(&self, sites: &[SiteDataset]) -> Result<SplitPlan, ExperimentError> {
        let plan = match self.scenario.spatial {
            Spatial::OnSite => {
                let n_years = sites
                    .iter()
                    .flat_map(|s| s.years())
                    .collect::<std::collections::BTreeSet<_>>()
                    .len();
                let n = self.n_folds.unwrap_or(n_years.saturating_sub(1));
                temporal_block_split(sites, n)?
            }
            Spatial::MultiSite => {
                leave_site_out_split(sites, self.test_site.unwrap_or(sites.len().saturating_sub(1)))?
            }
        };
        plan.check_disjoint()?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: String,
    pub n_train: usize,
    pub n_validation: usize,
    pub mae: f64,
    pub validation_loss: Option<f64>,
    #[serde(skip)]
    pub trace: LossTrace,
    #[serde(skip)]
    pub model: Option<CoupledModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: CouplingKind,
    pub scenario: String,
    pub test: String,
    pub n_test: usize,
    pub hidden: Vec<usize>,
    pub hyper: HyperParams,
    /// Selection index of the chosen candidate when a search was run.
    pub search_index: Option<f64>,
    pub folds: Vec<FoldResult>,
    pub mae_mean: f64,
    /// Population standard deviation over folds.
    pub mae_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub config: ExperimentConfig,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn to_json(&self) -> Result<String, ExperimentError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per kind and fold:
    /// `kind,scenario,fold,n_train,n_validation,n_test,mae,validation_loss`.
    pub fn folds_csv(&self) -> Result<String, ExperimentError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["kind", "scenario", "fold", "n_train", "n_validation", "n_test", "mae", "validation_loss"])?;
        for r in &self.rows {
            for f in &r.folds {
                w.write_record([
                    r.kind.name().to_string(),
                    r.scenario.clone(),
                    f.fold.clone(),
                    f.n_train.to_string(),
                    f.n_validation.to_string(),
                    r.n_test.to_string(),
                    format!("{:.16e}", f.mae),
                    f.validation_loss.map_or(String::new(), |v| format!("{v:.16e}")),
                ])?;
            }
        }
        into_string(w)
    }

    /// Per-epoch losses: `kind,fold,epoch,train,validation`.
    pub fn traces_csv(&self) -> Result<String, ExperimentError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["kind", "fold", "epoch", "train", "validation"])?;
        for r in &self.rows {
            for f in &r.folds {
                for (e, t) in f.trace.train.iter().enumerate() {
                    w.write_record([
                        r.kind.name().to_string(),
                        f.fold.clone(),
                        (e + 1).to_string(),
                        format!("{t:.16e}"),
                        f.trace.validation.get(e).map_or(String::new(), |v| format!("{v:.16e}")),
                    ])?;
                }
            }
        }
        into_string(w)
    }
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String, ExperimentError> {
    let bytes = w.into_inner().map_err(|e| ExperimentError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Runs the scenario for every requested kind: split, optional search,
/// training per fold and test-set MAE.
pub fn run_experiment(config: &ExperimentConfig, sites: &[SiteDataset]) -> Result<Report, ExperimentError> {
    config.validate()?;
    let sites = config.prepare_sites(sites);
    let plan = config.split(&sites)?;
    let pretraining = config.pretraining_set()?;
    let mut rows = Vec::with_capacity(config.kinds.len());
    for (k, &kind) in config.kinds.iter().enumerate() {
        run_kind(config, &sites, &plan, pretraining.as_ref(), kind, k as u64)
            .map(|row| rows.push(row))
            .map_err(|e| e.context(format!("{kind} ({})", config.scenario.label())))?;
    }
    Ok(Report {
        version: EXPERIMENT_VERSION,
        config: config.clone(),
        rows,
    })
}

fn run_kind(
    config: &ExperimentConfig,
    sites: &[SiteDataset],
    plan: &SplitPlan,
    pretraining: Option<&SiteDataset>,
    kind: CouplingKind,
    k: u64,
) -> Result<ReportRow, ExperimentError> {
    let mut settings = config.train_settings(pretraining);
    let mut hyper = config.hyper;
    if kind.uses_lambda() && hyper.lambda.is_none() {
        hyper.lambda = Some(0.5);
    }
    if !kind.uses_lambda() {
        hyper.lambda = None;
    }
    let (hidden, hyper, search_index) = if config.budget > 0 && kind != CouplingKind::ProcessOnly {
        let space = SearchSpace {
            seed: child_seed(config.seed, "search", k),
            ..config.search.clone()
        };
        let result = random_search(kind, sites, plan, &space, config.budget, &settings)?;
        let best: &Candidate = &result.best().candidate;
        (best.hidden.clone(), best.hyper, result.best().index)
    } else {
        (config.hidden.clone(), hyper, None)
    };
    let mut folds = Vec::with_capacity(plan.folds.len());
    for (f, fold) in plan.folds.iter().enumerate() {
        let data = plan.training_data(sites, f);
        if let Some(cal) = &config.calibration {
            if kind != CouplingKind::Naive {
                settings.pm_params = calibrate_pm_gradient(sites, &data.train, &config.pm_params, cal)?.params;
            }
        }
        let seed = child_seed(config.seed, "fold", k * 1000 + f as u64);
        let (model, trace) = fit_model(kind, &hidden, &hyper, &settings, &data, seed)?;
        let mae = evaluate_mae(&model, sites, &plan.test)?;
        folds.push(FoldResult {
            fold: fold.label.clone(),
            n_train: data.n_train(),
            n_validation: data.n_validation(),
            mae,
            validation_loss: trace.last_validation(),
            trace,
            model: Some(model),
        });
    }
    let maes: Vec<f64> = folds.iter().map(|f| f.mae).collect();
    let (mae_mean, mae_std) = mean_std(&maes);
    Ok(ReportRow {
        kind,
        scenario: config.scenario.label(),
        test: plan.test_label.clone(),
        n_test: plan.test.iter().map(Vec::len).sum(),
        hidden: if kind == CouplingKind::ProcessOnly { Vec::new() } else { hidden },
        hyper,
        search_index,
        folds,
        mae_mean,
        mae_std,
    })
}

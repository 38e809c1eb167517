//! Process-model / network couplings behind one predict and train contract.

mod embedding;
mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Tape};
use crate::data::{
    covariates, encode_doy, DataError, NormalizationStats, ParameterPrior, SiteDataset,
};
use crate::neural::{mse_loss, Activation, Mlp, MlpSpec, NeuralError};
use crate::process_model::{
    simulate, simulate_trace, step_day, DriverRecord, ModelOutput, ModelState, PrelesParams,
    ProcessError, N_PARAMS,
};

pub use train::{finetune, pretrain, train_model, HyperParams};

/// Length of the climate feature vector: five covariates and the DOY pair.
pub const N_FEATURES: usize = 7;
/// Length of the process-model output feature vector.
pub const N_PM_FEATURES: usize = 3;
pub const PM_OUTPUT_NAMES: [&str; N_PM_FEATURES] = ["gpp_pm", "et_pm", "soil_water_pm"];

/// Current model bundle format.
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("feature schema mismatch for {kind}: {message}")]
    Schema { kind: CouplingKind, message: String },
    #[error("unsupported bundle version {0}")]
    Version(u32),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingKind {
    ProcessOnly,
    Naive,
    BiasCorrection,
    ParallelPhysics,
    PhysicsRegularisation,
    PhysicsEmbedding,
    DomainAdaptation,
}

impl CouplingKind {
    pub const ALL: [CouplingKind; 7] = [
        CouplingKind::ProcessOnly,
        CouplingKind::Naive,
        CouplingKind::BiasCorrection,
        CouplingKind::ParallelPhysics,
        CouplingKind::PhysicsRegularisation,
        CouplingKind::PhysicsEmbedding,
        CouplingKind::DomainAdaptation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CouplingKind::ProcessOnly => "process-only",
            CouplingKind::Naive => "naive",
            CouplingKind::BiasCorrection => "bias-correction",
            CouplingKind::ParallelPhysics => "parallel-physics",
            CouplingKind::PhysicsRegularisation => "physics-regularisation",
            CouplingKind::PhysicsEmbedding => "physics-embedding",
            CouplingKind::DomainAdaptation => "domain-adaptation",
        }
    }

    /// Kinds carrying a fixed process-model parameter vector.
    pub fn has_fixed_pm(self) -> bool {
        matches!(
            self,
            CouplingKind::ProcessOnly
                | CouplingKind::BiasCorrection
                | CouplingKind::ParallelPhysics
                | CouplingKind::PhysicsRegularisation
        )
    }

    pub fn uses_lambda(self) -> bool {
        matches!(
            self,
            CouplingKind::PhysicsRegularisation | CouplingKind::PhysicsEmbedding
        )
    }

    /// Input width of the (residual) network.
    pub fn feature_len(self) -> usize {
        match self {
            CouplingKind::BiasCorrection | CouplingKind::PhysicsEmbedding => N_PM_FEATURES,
            _ => N_FEATURES,
        }
    }
}

impl fmt::Display for CouplingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CouplingKind {
    type Err = CouplingError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        CouplingKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| CouplingError::Invalid(format!("unknown coupling kind {s:?}")))
    }
}

/// Normalization of network inputs, fitted on training records only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub covariates: NormalizationStats,
    /// Stats of `[gpp, et, soil_water]` of the process model, for kinds that
    /// feed model outputs to a network.
    pub pm_outputs: Option<NormalizationStats>,
}

impl FeatureScaler {
    /// `[z(T), z(D), z(φ), z(R), z(fAPAR), sin(d), cos(d)]`.
    pub fn features(&self, d: &DriverRecord) -> Result<[f64; N_FEATURES], DataError> {
        let c = covariates(d);
        let (s, co) = encode_doy(d.doy as f64)?;
        Ok([
            self.covariates.normalize(0, c[0]),
            self.covariates.normalize(1, c[1]),
            self.covariates.normalize(2, c[2]),
            self.covariates.normalize(3, c[3]),
            self.covariates.normalize(4, c[4]),
            s,
            co,
        ])
    }

    pub fn pm_features(&self, o: &ModelOutput) -> Option<[f64; N_PM_FEATURES]> {
        let s = self.pm_outputs.as_ref()?;
        Some([
            s.normalize(0, o.gpp),
            s.normalize(1, o.et),
            s.normalize(2, o.soil_water),
        ])
    }
}

/// Network input for one day under `kind`'s schema.
pub fn features_for(
    kind: CouplingKind,
    scaler: &FeatureScaler,
    driver: &DriverRecord,
    pm_output: Option<&ModelOutput>,
) -> Result<Vec<f64>, CouplingError> {
    let schema = |message: &str| CouplingError::Schema {
        kind,
        message: message.to_string(),
    };
    match kind {
        CouplingKind::ProcessOnly => Err(schema("process-only model has no network input")),
        CouplingKind::BiasCorrection | CouplingKind::PhysicsEmbedding => {
            let o = pm_output.ok_or_else(|| schema("process-model output required"))?;
            let f = scaler
                .pm_features(o)
                .ok_or_else(|| schema("scaler lacks process-model output statistics"))?;
            Ok(f.to_vec())
        }
        _ => {
            if pm_output.is_some() {
                return Err(schema("process-model output is not an input of this kind"));
            }
            Ok(scaler.features(driver)?.to_vec())
        }
    }
}

/// Parameter and residual networks of the embedding coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingNets {
    /// climate features → 13 unbounded values, squashed into `prior`
    pub param_net: Mlp,
    /// normalized `[gpp, et, soil_water]` → GPP
    pub residual_net: Mlp,
    pub prior: ParameterPrior,
}

impl EmbeddingNets {
    /// Process-model parameters for one day from its climate features.
    pub fn day_params(&self, features: &[f64]) -> PrelesParams {
        let raw = self.param_net.forward_batch(features);
        let arr: [f64; N_PARAMS] = raw.try_into().expect("param net emits 13 values");
        self.prior.squash(&arr)
    }
}

/// A coupling with all its parts; fields are present iff the kind uses them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledModel {
    pub kind: CouplingKind,
    pub scaler: FeatureScaler,
    pub pm_params: Option<PrelesParams>,
    pub net: Option<Mlp>,
    pub lambda: Option<f64>,
    pub embedding: Option<EmbeddingNets>,
    /// Layers re-fitted by fine-tuning (domain adaptation).
    pub finetune_layers: Option<usize>,
}

/// Architecture and fixed settings used to build a [`CoupledModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub lambda: Option<f64>,
    #[serde(default = "default_finetune_layers")]
    pub finetune_layers: usize,
    #[serde(default)]
    pub pm_params: PrelesParams,
    #[serde(default = "ParameterPrior::wide")]
    pub embedding_prior: ParameterPrior,
}

fn default_finetune_layers() -> usize {
    1
}

impl ModelConfig {
    pub fn new(hidden: &[usize]) -> Self {
        Self {
            hidden: hidden.to_vec(),
            activation: Activation::Tanh,
            lambda: None,
            finetune_layers: 1,
            pm_params: PrelesParams::default(),
            embedding_prior: ParameterPrior::wide(),
        }
    }
}

/// Per-site index sets of a training fold.
#[derive(Debug, Clone)]
pub struct TrainingData<'a> {
    pub sites: &'a [SiteDataset],
    pub train: Vec<Vec<usize>>,
    pub validation: Vec<Vec<usize>>,
}

impl<'a> TrainingData<'a> {
    /// Every record of every site is a training record; no validation.
    pub fn all(sites: &'a [SiteDataset]) -> Self {
        Self {
            sites,
            train: sites.iter().map(|s| (0..s.len()).collect()).collect(),
            validation: sites.iter().map(|_| Vec::new()).collect(),
        }
    }

    pub fn n_train(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }

    pub fn n_validation(&self) -> usize {
        self.validation.iter().map(Vec::len).sum()
    }

    fn check(&self) -> Result<(), CouplingError> {
        if self.train.len() != self.sites.len() || self.validation.len() != self.sites.len() {
            return Err(CouplingError::Invalid("one index list per site required".into()));
        }
        for (site, (tr, va)) in self.sites.iter().zip(self.train.iter().zip(&self.validation)) {
            if tr.iter().chain(va).any(|&i| i >= site.len()) {
                return Err(CouplingError::Invalid(format!(
                    "index out of range for site {}",
                    site.site_id
                )));
            }
        }
        if self.n_train() == 0 {
            return Err(CouplingError::Invalid("no training records".into()));
        }
        Ok(())
    }
}

/// Prediction split into its additive parts where the coupling has them.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub total: Vec<f64>,
    pub nn: Option<Vec<f64>>,
    pub pm: Option<Vec<f64>>,
}

impl CoupledModel {
    /// Fits normalization on the training records and initializes networks.
    pub fn build(
        kind: CouplingKind,
        config: &ModelConfig,
        data: &TrainingData<'_>,
        seed: u64,
    ) -> Result<Self, CouplingError> {
        data.check()?;
        let train_records: Vec<_> = data
            .sites
            .iter()
            .zip(&data.train)
            .flat_map(|(s, idx)| idx.iter().map(move |&i| s.records[i]))
            .collect();
        let cov = NormalizationStats::fit_covariates(&train_records)?;
        let lambda = if kind.uses_lambda() {
            let l = config.lambda.unwrap_or(0.5);
            if !(l > 0.0 && l <= 1.0) {
                return Err(CouplingError::Invalid(format!("lambda {l} outside (0, 1]")));
            }
            Some(l)
        } else {
            None
        };
        config.pm_params.validate()?;
        let pm_outputs = if matches!(
            kind,
            CouplingKind::BiasCorrection | CouplingKind::PhysicsEmbedding
        ) {
            let mut rows = Vec::with_capacity(train_records.len());
            for (site, idx) in data.sites.iter().zip(&data.train) {
                if idx.is_empty() {
                    continue;
                }
                let out = run_pm(&config.pm_params, &site.drivers())?;
                rows.extend(idx.iter().map(|&i| vec![out[i].gpp, out[i].et, out[i].soil_water]));
            }
            Some(NormalizationStats::fit(&PM_OUTPUT_NAMES, &rows)?)
        } else {
            None
        };
        let scaler = FeatureScaler {
            covariates: cov,
            pm_outputs,
        };
        let net_spec = |input_dim: usize, output_dim: usize| MlpSpec {
            input_dim,
            layer_sizes: config.hidden.clone(),
            output_dim,
            hidden_activation: config.activation,
        };
        let mut model = CoupledModel {
            kind,
            scaler,
            pm_params: kind.has_fixed_pm().then_some(config.pm_params),
            net: None,
            lambda,
            embedding: None,
            finetune_layers: None,
        };
        match kind {
            CouplingKind::ProcessOnly => {}
            CouplingKind::PhysicsEmbedding => {
                let mut param_net = Mlp::init(net_spec(N_FEATURES, N_PARAMS), seed)?;
                // Start every day at the default calibration: zero output
                // weights, output bias at the prior pre-image of the defaults.
                let out_layer = param_net.spec.depth() - 1;
                let start = config.embedding_prior.unsquash(&config.pm_params);
                let (w, b) = param_net.layer_mut(out_layer);
                w.fill(0.0);
                b.copy_from_slice(&start);
                let residual_net = Mlp::init(net_spec(N_PM_FEATURES, 1), seed.wrapping_add(1))?;
                model.embedding = Some(EmbeddingNets {
                    param_net,
                    residual_net,
                    prior: config.embedding_prior.clone(),
                });
            }
            CouplingKind::DomainAdaptation => {
                let spec = net_spec(N_FEATURES, 1);
                if config.finetune_layers == 0 || config.finetune_layers >= spec.depth() {
                    return Err(CouplingError::Invalid(format!(
                        "fine-tuning {} of {} layers; need 1 <= k < depth",
                        config.finetune_layers,
                        spec.depth()
                    )));
                }
                model.net = Some(Mlp::init(spec, seed)?);
                model.finetune_layers = Some(config.finetune_layers);
            }
            _ => {
                model.net = Some(Mlp::init(net_spec(kind.feature_len(), 1), seed)?);
            }
        }
        model.validate()?;
        Ok(model)
    }

    /// Checks that exactly the parts required by the kind are present.
    pub fn validate(&self) -> Result<(), CouplingError> {
        let bad = |m: &str| Err(CouplingError::Invalid(format!("{}: {m}", self.kind)));
        if self.pm_params.is_some() != self.kind.has_fixed_pm() {
            return bad("process-model parameters present iff the PM is fixed");
        }
        if let Some(p) = &self.pm_params {
            p.validate()?;
        }
        let wants_net = !matches!(
            self.kind,
            CouplingKind::ProcessOnly | CouplingKind::PhysicsEmbedding
        );
        if self.net.is_some() != wants_net {
            return bad("network present iff the kind has one");
        }
        if let Some(net) = &self.net {
            if net.spec.input_dim != self.kind.feature_len() || net.spec.output_dim != 1 {
                return bad("network shape does not match the feature schema");
            }
        }
        match (self.kind.uses_lambda(), self.lambda) {
            (true, Some(l)) if l > 0.0 && l <= 1.0 => {}
            (false, None) => {}
            _ => return bad("lambda must be in (0, 1] exactly for regularised kinds"),
        }
        if self.embedding.is_some() != (self.kind == CouplingKind::PhysicsEmbedding) {
            return bad("embedding networks present iff physics embedding");
        }
        if let Some(e) = &self.embedding {
            if e.param_net.spec.input_dim != N_FEATURES
                || e.param_net.spec.output_dim != N_PARAMS
                || e.residual_net.spec.input_dim != N_PM_FEATURES
                || e.residual_net.spec.output_dim != 1
            {
                return bad("embedding network shapes");
            }
        }
        if self.finetune_layers.is_some() != (self.kind == CouplingKind::DomainAdaptation) {
            return bad("fine-tune depth present iff domain adaptation");
        }
        let needs_pm_stats = matches!(
            self.kind,
            CouplingKind::BiasCorrection | CouplingKind::PhysicsEmbedding
        );
        if self.scaler.pm_outputs.is_some() != needs_pm_stats {
            return bad("process-model output statistics");
        }
        Ok(())
    }

    /// Process-model parameters for one day, if the kind has a PM.
    fn day_params(&self, driver: &DriverRecord) -> Result<Option<PrelesParams>, CouplingError> {
        if let Some(p) = self.pm_params {
            return Ok(Some(p));
        }
        if let Some(e) = &self.embedding {
            let f = self.scaler.features(driver)?;
            return Ok(Some(e.day_params(&f)));
        }
        Ok(None)
    }

    /// Start-of-day PM states and PM outputs over `drivers`; `None` for kinds
    /// without a process model.
    pub fn pm_trace(
        &self,
        drivers: &[DriverRecord],
    ) -> Result<Option<Vec<(ModelState, ModelOutput)>>, CouplingError> {
        if let Some(p) = &self.pm_params {
            let first = drivers.first().ok_or(ProcessError::EmptyDrivers)?;
            return Ok(Some(simulate_trace(p, drivers, ModelState::initial(p, first))?));
        }
        if self.embedding.is_some() {
            let params: Vec<PrelesParams> = drivers
                .iter()
                .map(|d| Ok(self.day_params(d)?.expect("embedding has a PM")))
                .collect::<Result<_, CouplingError>>()?;
            return Ok(Some(embedding::trace_varying(&params, drivers)?));
        }
        Ok(None)
    }

    /// Prediction for one day given the PM state at its start. Kinds without
    /// a process model ignore `state`.
    pub fn predict_day(
        &self,
        driver: &DriverRecord,
        state: Option<&ModelState>,
    ) -> Result<DayPrediction, CouplingError> {
        let pm = match self.day_params(driver)? {
            Some(p) => {
                let s = state.ok_or_else(|| {
                    CouplingError::Invalid(format!("{} needs a process-model state", self.kind))
                })?;
                Some(step_day(driver, s, &p).output)
            }
            None => None,
        };
        let pm_gpp = pm.map(|o| o.gpp);
        let nn = match self.kind {
            CouplingKind::ProcessOnly => None,
            CouplingKind::PhysicsEmbedding => {
                let e = self.embedding.as_ref().expect("validated");
                let f = features_for(self.kind, &self.scaler, driver, pm.as_ref())?;
                Some(e.residual_net.forward_batch(&f)[0])
            }
            CouplingKind::BiasCorrection => {
                let f = features_for(self.kind, &self.scaler, driver, pm.as_ref())?;
                Some(self.net.as_ref().expect("validated").forward_batch(&f)[0])
            }
            _ => {
                let f = features_for(self.kind, &self.scaler, driver, None)?;
                Some(self.net.as_ref().expect("validated").forward_batch(&f)[0])
            }
        };
        let total = match self.kind {
            CouplingKind::ProcessOnly => pm_gpp.expect("process model"),
            CouplingKind::ParallelPhysics => nn.expect("net") + pm_gpp.expect("process model"),
            _ => nn.expect("net"),
        };
        Ok(DayPrediction {
            total,
            nn,
            pm: pm_gpp,
        })
    }

    /// Predictions with their additive parts over a whole driver sequence.
    pub fn predict_parts(&self, drivers: &[DriverRecord]) -> Result<Prediction, CouplingError> {
        if drivers.is_empty() {
            return Err(ProcessError::EmptyDrivers.into());
        }
        let trace = self.pm_trace(drivers)?;
        let mut total = Vec::with_capacity(drivers.len());
        let mut nn = Vec::new();
        let mut pm = Vec::new();
        for (k, d) in drivers.iter().enumerate() {
            let state = trace.as_ref().map(|t| &t[k].0);
            let p = self.predict_day(d, state)?;
            total.push(p.total);
            nn.extend(p.nn);
            pm.extend(p.pm);
        }
        Ok(Prediction {
            total,
            nn: (!nn.is_empty()).then_some(nn),
            pm: (!pm.is_empty()).then_some(pm),
        })
    }

    pub fn predict(&self, drivers: &[DriverRecord]) -> Result<Vec<f64>, CouplingError> {
        Ok(self.predict_parts(drivers)?.total)
    }

    /// Number of trainable network parameters.
    pub fn n_trainable(&self) -> usize {
        self.net.as_ref().map_or(0, |n| n.params.len())
            + self
                .embedding
                .as_ref()
                .map_or(0, |e| e.param_net.params.len() + e.residual_net.params.len())
    }

    /// Gradient of the kind's training loss over the given records, grouped
    /// by component (`pm`, `net`, `param_net`, `residual_net`). Process-model
    /// parameters are placed on the tape as trainable leaves; a group appears
    /// only if the loss depends on it.
    pub fn gradient_map(
        &self,
        data: &TrainingData<'_>,
    ) -> Result<BTreeMap<&'static str, Vec<f64>>, CouplingError> {
        data.check()?;
        let tape = Tape::new();
        let pm_leaves = match &self.pm_params {
            Some(p) => Some(tape.param_block(&p.to_array())?),
            None => None,
        };
        let mut groups: Vec<(&'static str, usize, usize)> = Vec::new();
        if let Some(b) = pm_leaves {
            groups.push(("pm", 0, b.len()));
        }
        let mut preds = Vec::new();
        let mut targets = Vec::new();
        let mut phy_values = Vec::new();
        match self.kind {
            CouplingKind::PhysicsEmbedding => {
                let e = self.embedding.as_ref().expect("validated");
                let base = tape.n_params();
                let pn = tape.param_block(&e.param_net.params)?;
                let rn = tape.param_block(&e.residual_net.params)?;
                groups.push(("param_net", base, pn.len()));
                groups.push(("residual_net", base + pn.len(), rn.len()));
                let mut phy_vars = Vec::new();
                for (site, idx) in data.sites.iter().zip(&data.train) {
                    if idx.is_empty() {
                        continue;
                    }
                    let (p, phy) = embedding::sequence_on_tape(self, &tape, pn, rn, site)?;
                    for &i in idx {
                        preds.push(p[i]);
                        phy_vars.push(phy[i]);
                        targets.push(site.records[i].gpp);
                    }
                }
                let lambda = self.lambda.expect("validated");
                let loss = mse_loss(&preds, &targets)?
                    + crate::neural::mse_between(&phy_vars, &preds)? * lambda;
                return collect_groups(&tape, &loss, &groups);
            }
            _ => {
                let net_block = match &self.net {
                    Some(n) => {
                        let base = tape.n_params();
                        let b = tape.param_block(&n.params)?;
                        groups.push(("net", base, b.len()));
                        Some(b)
                    }
                    None => None,
                };
                for (site, idx) in data.sites.iter().zip(&data.train) {
                    if idx.is_empty() {
                        continue;
                    }
                    let drivers = site.drivers();
                    let pm_out = match pm_leaves {
                        Some(b) => {
                            let p = PrelesParams::from_slice(&b.vars()).expect("13 leaves");
                            let first = &drivers[0];
                            Some(simulate(&p, &drivers, ModelState::initial(&p, first))?)
                        }
                        None => None,
                    };
                    for &i in idx {
                        let d = &drivers[i];
                        targets.push(site.records[i].gpp);
                        let pm_var = pm_out.as_ref().map(|o| o[i]);
                        let pm_f64 = pm_var.map(|o| o.values());
                        phy_values.push(pm_f64.map_or(0.0, |o| o.gpp));
                        match (self.kind, net_block) {
                            (CouplingKind::ProcessOnly, _) => preds.push(pm_var.expect("pm").gpp),
                            (_, Some(nb)) => {
                                // PM outputs enter networks as detached values.
                                let pm_in = pm_f64.as_ref().filter(|_| self.kind == CouplingKind::BiasCorrection);
                                let f = features_for(self.kind, &self.scaler, d, pm_in)?;
                                let x = tape.constant_block(&f)?;
                                let net = self.net.as_ref().expect("validated");
                                let y = net.forward_tape(&tape, nb, x)?.var(0);
                                preds.push(if self.kind == CouplingKind::ParallelPhysics {
                                    y + pm_f64.expect("pm").gpp
                                } else {
                                    y
                                });
                            }
                            _ => unreachable!("validated"),
                        }
                    }
                }
            }
        }
        let loss = match self.kind {
            CouplingKind::PhysicsRegularisation => {
                regularised_loss(&targets, &preds, &phy_values, self.lambda.expect("validated"))?
            }
            _ => mse_loss(&preds, &targets)?,
        };
        collect_groups(&tape, &loss, &groups)
    }
}

fn collect_groups(
    tape: &Tape,
    loss: &crate::autodiff::Var<'_>,
    groups: &[(&'static str, usize, usize)],
) -> Result<BTreeMap<&'static str, Vec<f64>>, CouplingError> {
    let grads = tape.backward(loss)?;
    let mut map = BTreeMap::new();
    for &(name, start, len) in groups {
        let ids = start..start + len;
        let reached = ids
            .clone()
            .any(|i| grads.get(crate::autodiff::ParamId(i as u32)).is_some());
        if reached {
            map.insert(name, grads.dense()[ids].to_vec());
        }
    }
    Ok(map)
}

/// One day's prediction and its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayPrediction {
    pub total: f64,
    pub nn: Option<f64>,
    pub pm: Option<f64>,
}

/// Plain process-model run from the default initial state.
pub fn run_pm(params: &PrelesParams, drivers: &[DriverRecord]) -> Result<Vec<ModelOutput>, CouplingError> {
    let first = drivers.first().ok_or(ProcessError::EmptyDrivers)?;
    Ok(simulate(params, drivers, ModelState::initial(params, first))?)
}

/// `MSE(y, ŷ_nn) + λ · MSE(ŷ_phy, ŷ_nn)`.
pub fn regularised_loss<R: crate::autodiff::Real>(
    targets: &[f64],
    nn: &[R],
    phy: &[f64],
    lambda: f64,
) -> Result<R, CouplingError> {
    Ok(mse_loss(nn, targets)? + mse_loss(nn, phy)? * lambda)
}

/// `MSE(y, ŷ_nn + ŷ_phy)`.
pub fn parallel_loss<R: crate::autodiff::Real>(
    targets: &[f64],
    nn: &[R],
    phy: &[f64],
) -> Result<R, CouplingError> {
    if nn.len() != phy.len() {
        return Err(NeuralError::Dimension {
            expected: nn.len(),
            found: phy.len(),
        }
        .into());
    }
    let preds: Vec<R> = nn.iter().zip(phy).map(|(n, p)| *n + *p).collect();
    Ok(mse_loss(&preds, targets)?)
}

/// Versioned container of trained models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub version: u32,
    pub models: Vec<CoupledModel>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl ModelBundle {
    pub fn new(models: Vec<CoupledModel>) -> Self {
        Self {
            version: BUNDLE_VERSION,
            models,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> Result<String, CouplingError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CouplingError> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let version = raw
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| CouplingError::Invalid("bundle lacks a version field".into()))?;
        if version != BUNDLE_VERSION as u64 {
            return Err(CouplingError::Version(version as u32));
        }
        let bundle: ModelBundle = serde_json::from_value(raw)?;
        for m in &bundle.models {
            m.validate()?;
        }
        Ok(bundle)
    }
}

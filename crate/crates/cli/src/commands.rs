use std::path::Path;

use anyhow::{Context, Result};
use pgnn::analysis::{export_report, observed_grid, seasonal_ice, IceMode, IceVariable, DEFAULT_GRID_POINTS};
use pgnn::couplings::{CoupledModel, CouplingKind, ModelBundle};
use pgnn::data::{load_csv, thin_weekly, write_csv, ConversionProfile, SiteDataset, SyntheticSites};
use pgnn::experiments::{
    child_seed, evaluate_mae, mean_std, random_search, run_experiment, Candidate, Density, ExperimentConfig,
    Report, Scenario, SearchResult, SearchSpace,
};
use serde::{Deserialize, Serialize};

use crate::config::{as_usage, section, usage, write_json, write_text, Provenance};
use crate::ranges::DateRanges;
use crate::{EvaluateArgs, ExperimentArgs, IceArgs, Resolved, SearchArgs, SimulateArgs, TrainArgs};

fn load_sites(path: &Path) -> Result<Vec<SiteDataset>> {
    load_csv(path, ConversionProfile::Converted).with_context(|| format!("loading {}", path.display()))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct SimulateConfig {
    days: usize,
    sites: usize,
    #[serde(flatten)]
    synthetic: SyntheticSites,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            days: 3 * 365,
            sites: 2,
            synthetic: SyntheticSites::default(),
        }
    }
}

pub fn simulate(r: &Resolved, a: &SimulateArgs) -> Result<()> {
    let mut c: SimulateConfig = section(r.file.simulate.as_ref(), "simulate")?;
    c.days = a.days.unwrap_or(c.days);
    c.sites = a.sites.unwrap_or(c.sites);
    if let Some(y) = a.start_year {
        c.synthetic.start_year = y;
    }
    if let Some(v) = a.residual_amplitude {
        c.synthetic.residual_amplitude = v;
    }
    if let Some(v) = a.noise_sd {
        c.synthetic.noise_sd = v;
    }
    if c.days == 0 || c.sites == 0 {
        return Err(usage("--days and --sites must be >= 1"));
    }
    if c.synthetic.groups.is_empty() {
        return Err(usage("no climate groups configured"));
    }
    let base = c.synthetic.groups.clone();
    c.synthetic.groups = (0..c.sites).map(|k| base[k % base.len()].clone()).collect();
    c.synthetic.years = c.days.div_ceil(365);
    c.synthetic.seed = r.seed;
    let sites: Vec<SiteDataset> = as_usage(c.synthetic.generate())?
        .iter()
        .map(|s| s.subset(&(0..c.days).collect::<Vec<_>>()))
        .collect();
    let path = r.out.join("data.csv");
    let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_csv(&sites, std::io::BufWriter::new(file))?;
    Provenance::new("simulate", r.seed, &c)?.write(&r.out)?;
    println!("wrote {} site-days to {}", c.days * c.sites, path.display());
    Ok(())
}

fn experiment_config(r: &Resolved, a: &ExperimentArgs) -> Result<ExperimentConfig> {
    let raw = r.file.experiment.as_ref();
    let mut c: ExperimentConfig = section(raw, "experiment")?;
    if !a.kind.is_empty() {
        c.kinds = Vec::new();
        for k in &a.kind {
            if !c.kinds.contains(k) {
                c.kinds.push(*k);
            }
        }
    } else if raw.and_then(|v| v.get("kinds")).is_none() {
        return Err(usage("no coupling kind given; pass --kind"));
    }
    if let Some(s) = a.spatial {
        c.scenario.spatial = s;
    }
    if let Some(d) = a.density {
        c.scenario.density = d;
    }
    if a.folds.is_some() {
        c.n_folds = a.folds;
    }
    if a.test_site.is_some() {
        c.test_site = a.test_site;
    }
    c.epochs = a.epochs.unwrap_or(c.epochs);
    if !a.hidden.is_empty() {
        c.hidden = a.hidden.clone();
    }
    c.hyper.learning_rate = a.lr.unwrap_or(c.hyper.learning_rate);
    c.hyper.batch_size = a.batch_size.unwrap_or(c.hyper.batch_size);
    if a.lambda.is_some() {
        c.hyper.lambda = a.lambda;
    }
    c.seed = r.seed;
    Ok(c)
}

#[derive(Debug, Serialize, Deserialize)]
struct SearchOutput {
    provenance: Provenance,
    kind: CouplingKind,
    best: Candidate,
    best_index: f64,
    result: SearchResult,
}

pub fn search(r: &Resolved, a: &SearchArgs) -> Result<()> {
    let mut c = experiment_config(r, &a.experiment)?;
    c.budget = a.budget.unwrap_or(c.budget);
    let [kind] = c.kinds[..] else {
        return Err(usage("search takes exactly one --kind"));
    };
    if kind == CouplingKind::ProcessOnly {
        return Err(usage("process-only has no network to search"));
    }
    if c.budget == 0 {
        return Err(usage("--budget must be >= 1"));
    }
    as_usage(c.validate())?;
    let sites = c.prepare_sites(&load_sites(&a.experiment.data)?);
    let plan = as_usage(c.split(&sites))?;
    let pretraining = c.pretraining_set()?;
    let settings = c.train_settings(pretraining.as_ref());
    // Same stream as a search run inside `train` for a single kind.
    let space = SearchSpace {
        seed: child_seed(c.seed, "search", 0),
        ..c.search.clone()
    };
    let result = random_search(kind, &sites, &plan, &space, c.budget, &settings)?;
    let provenance = Provenance::new("search", r.seed, &c)?.input("data", &a.experiment.data)?;
    write_text(&r.out.join("search.csv"), &result.to_csv()?)?;
    let best = result.best();
    let output = SearchOutput {
        provenance: provenance.clone(),
        kind,
        best: best.candidate.clone(),
        best_index: best.index.expect("best candidate succeeded"),
        result: result.clone(),
    };
    write_json(&r.out.join("search.json"), &output)?;
    provenance.write(&r.out)?;
    println!(
        "{kind}: best of {} candidates {} lr {:.3e} batch {} index {:.6e}",
        result.results.len(),
        best.candidate.architecture_label(),
        best.candidate.hyper.learning_rate,
        best.candidate.hyper.batch_size,
        output.best_index
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    kind: CouplingKind,
    fold: String,
    train: DateRanges,
    validation: DateRanges,
}

/// What a bundle records about how its models were trained.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct BundleMeta {
    scenario: Scenario,
    test_label: String,
    test: DateRanges,
    models: Vec<ModelMeta>,
    provenance: Provenance,
}

impl BundleMeta {
    fn of(bundle: &ModelBundle) -> Result<Self> {
        let map: serde_json::Map<String, serde_json::Value> =
            bundle.metadata.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let meta: BundleMeta = serde_json::from_value(serde_json::Value::Object(map))
            .map_err(|e| usage(format!("bundle metadata: {e}")))?;
        if meta.models.len() != bundle.models.len() {
            return Err(usage("bundle metadata does not match its models"));
        }
        Ok(meta)
    }

    fn prepare(&self, sites: Vec<SiteDataset>) -> Vec<SiteDataset> {
        match self.scenario.density {
            Density::Full => sites,
            Density::Sparse => sites.iter().map(thin_weekly).collect(),
        }
    }

    fn trained_on(&self, site: &str, date: chrono::NaiveDate) -> bool {
        self.models
            .iter()
            .any(|m| m.train.contains(site, date) || m.validation.contains(site, date))
    }
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    provenance: &'a Provenance,
    report: &'a Report,
}

pub fn train(r: &Resolved, a: &TrainArgs) -> Result<()> {
    let mut c = experiment_config(r, &a.experiment)?;
    c.budget = a.budget.unwrap_or(c.budget);
    if let Some(path) = &a.search {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let s: SearchOutput = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        if c.kinds != [s.kind] {
            return Err(usage(format!("search result is for {}; pass --kind {}", s.kind, s.kind)));
        }
        c.hidden = s.best.hidden;
        c.hyper = s.best.hyper;
        c.budget = 0;
    }
    as_usage(c.validate())?;
    let raw = load_sites(&a.experiment.data)?;
    let mut provenance = Provenance::new("train", r.seed, &c)?.input("data", &a.experiment.data)?;
    if let Some(path) = &a.search {
        provenance = provenance.input("search", path)?;
    }
    let report = run_experiment(&c, &raw)?;

    let sites = c.prepare_sites(&raw);
    let plan = c.split(&sites)?;
    let mut models = Vec::new();
    let mut metas = Vec::new();
    for row in &report.rows {
        for (f, fold) in row.folds.iter().enumerate() {
            models.push(fold.model.clone().expect("experiment keeps fold models"));
            metas.push(ModelMeta {
                kind: row.kind,
                fold: fold.fold.clone(),
                train: DateRanges::from_indices(&sites, &plan.folds[f].train),
                validation: DateRanges::from_indices(&sites, &plan.folds[f].validation),
            });
        }
    }
    let meta = BundleMeta {
        scenario: c.scenario,
        test_label: plan.test_label.clone(),
        test: DateRanges::from_indices(&sites, &plan.test),
        models: metas,
        provenance: provenance.clone(),
    };
    let mut bundle = ModelBundle::new(models);
    if let serde_json::Value::Object(map) = serde_json::to_value(&meta)? {
        bundle.metadata = map.into_iter().collect();
    }
    write_text(&r.out.join("bundle.json"), &(bundle.to_json()? + "\n"))?;
    write_text(&r.out.join("folds.csv"), &report.folds_csv()?)?;
    write_text(&r.out.join("traces.csv"), &report.traces_csv()?)?;
    write_json(
        &r.out.join("report.json"),
        &TrainOutput {
            provenance: &provenance,
            report: &report,
        },
    )?;
    provenance.write(&r.out)?;
    for row in &report.rows {
        println!(
            "{} ({}, test {}): MAE {:.4} ± {:.4} over {} folds",
            row.kind,
            row.scenario,
            row.test,
            row.mae_mean,
            row.mae_std,
            row.folds.len()
        );
    }
    Ok(())
}

fn load_bundle(path: &Path) -> Result<(ModelBundle, BundleMeta)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let bundle = as_usage(ModelBundle::from_json(&text))?;
    let meta = BundleMeta::of(&bundle)?;
    Ok((bundle, meta))
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct EvaluateConfig {
    sites: Vec<String>,
    years: Vec<i32>,
    allow_leakage: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct FoldMae {
    fold: String,
    mae: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct EvaluateRow {
    kind: CouplingKind,
    folds: Vec<FoldMae>,
    mae_mean: f64,
    mae_std: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct EvaluateOutput {
    provenance: Provenance,
    bundle_sha256: String,
    scenario: Scenario,
    selection: String,
    n_records: usize,
    /// Selected records the models were trained or validated on.
    n_trained_on: usize,
    rows: Vec<EvaluateRow>,
}

pub fn evaluate(r: &Resolved, a: &EvaluateArgs) -> Result<()> {
    let mut c: EvaluateConfig = section(r.file.evaluate.as_ref(), "evaluate")?;
    if !a.site.is_empty() {
        c.sites = a.site.clone();
    }
    if !a.year.is_empty() {
        c.years = a.year.clone();
    }
    c.allow_leakage |= a.allow_leakage;
    let (bundle, meta) = load_bundle(&a.bundle)?;
    let sites = meta.prepare(load_sites(&a.data)?);
    let (selection, indices) = if c.sites.is_empty() && c.years.is_empty() {
        (format!("recorded test set ({})", meta.test_label), meta.test.select(&sites))
    } else {
        let idx = sites
            .iter()
            .map(|s| {
                let site_ok = c.sites.is_empty() || c.sites.contains(&s.site_id);
                s.records
                    .iter()
                    .enumerate()
                    .filter(|(_, rec)| site_ok && (c.years.is_empty() || c.years.contains(&chrono::Datelike::year(&rec.date))))
                    .map(|(i, _)| i)
                    .collect::<Vec<_>>()
            })
            .collect();
        (format!("sites {:?} years {:?}", c.sites, c.years), idx)
    };
    let n_records: usize = indices.iter().map(Vec::len).sum();
    if n_records == 0 {
        return Err(usage("no records selected for evaluation"));
    }
    let n_trained_on = sites
        .iter()
        .zip(&indices)
        .map(|(s, idx)| idx.iter().filter(|&&i| meta.trained_on(&s.site_id, s.records[i].date)).count())
        .sum::<usize>();
    if n_trained_on > 0 && !c.allow_leakage {
        return Err(usage(format!(
            "{n_trained_on} of {n_records} selected records were used in training; refusing without --allow-leakage"
        )));
    }
    let mut rows: Vec<EvaluateRow> = Vec::new();
    for (model, m) in bundle.models.iter().zip(&meta.models) {
        let mae = evaluate_mae(model, &sites, &indices)?;
        let fold = FoldMae { fold: m.fold.clone(), mae };
        match rows.iter_mut().find(|row| row.kind == m.kind) {
            Some(row) => row.folds.push(fold),
            None => rows.push(EvaluateRow {
                kind: m.kind,
                folds: vec![fold],
                mae_mean: 0.0,
                mae_std: 0.0,
            }),
        }
    }
    for row in &mut rows {
        let maes: Vec<f64> = row.folds.iter().map(|f| f.mae).collect();
        (row.mae_mean, row.mae_std) = mean_std(&maes);
    }
    let provenance = Provenance::new("evaluate", r.seed, &c)?
        .input("bundle", &a.bundle)?
        .input("data", &a.data)?;
    let output = EvaluateOutput {
        bundle_sha256: provenance.inputs["bundle"].clone(),
        provenance: provenance.clone(),
        scenario: meta.scenario,
        selection,
        n_records,
        n_trained_on,
        rows,
    };
    write_json(&r.out.join("evaluate.json"), &output)?;
    provenance.write(&r.out)?;
    for row in &output.rows {
        println!("{}: MAE {:.4} ± {:.4} on {n_records} records", row.kind, row.mae_mean, row.mae_std);
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct IceConfig {
    variables: Vec<IceVariable>,
    mode: IceMode,
    grid_points: usize,
    site: Option<String>,
    year: Option<i32>,
    fold: usize,
}

impl Default for IceConfig {
    fn default() -> Self {
        Self {
            variables: IceVariable::ALL.to_vec(),
            mode: IceMode::default(),
            grid_points: DEFAULT_GRID_POINTS,
            site: None,
            year: None,
            fold: 0,
        }
    }
}

pub fn ice(r: &Resolved, a: &IceArgs) -> Result<()> {
    let mut c: IceConfig = section(r.file.ice.as_ref(), "ice")?;
    if !a.variable.is_empty() {
        c.variables = Vec::new();
        for v in &a.variable {
            if !c.variables.contains(v) {
                c.variables.push(*v);
            }
        }
    }
    c.mode = a.mode.unwrap_or(c.mode);
    c.grid_points = a.grid_points.unwrap_or(c.grid_points);
    c.fold = a.fold.unwrap_or(c.fold);
    if a.site.is_some() {
        c.site = a.site.clone();
    }
    if a.year.is_some() {
        c.year = a.year;
    }
    if c.variables.is_empty() {
        return Err(usage("no ICE variables selected"));
    }
    if c.grid_points < 2 {
        return Err(usage("--grid-points must be >= 2"));
    }

    let (bundle, meta) = load_bundle(&a.bundle)?;
    let sites = meta.prepare(load_sites(&a.data)?);
    let site_id = match &c.site {
        Some(s) => s.clone(),
        None => meta
            .test
            .0
            .first()
            .map(|t| t.site.clone())
            .unwrap_or_else(|| sites[0].site_id.clone()),
    };
    let site = sites
        .iter()
        .find(|s| s.site_id == site_id)
        .ok_or_else(|| usage(format!("site {site_id:?} not in the data")))?;
    let year = match c.year.or_else(|| meta.test_label.parse().ok()) {
        Some(y) => y,
        None => *site.years().last().expect("sites are non-empty"),
    };

    let mut kinds: Vec<CouplingKind> = Vec::new();
    for m in &meta.models {
        if !kinds.contains(&m.kind) {
            kinds.push(m.kind);
        }
    }
    let mut entries = Vec::new();
    for kind in kinds {
        let (model, m): (&CoupledModel, &ModelMeta) = bundle
            .models
            .iter()
            .zip(&meta.models)
            .filter(|(_, m)| m.kind == kind)
            .nth(c.fold)
            .ok_or_else(|| usage(format!("{kind} has no fold {}", c.fold)))?;
        let grids = c
            .variables
            .iter()
            .map(|&v| {
                let seen = sites.iter().flat_map(|s| {
                    s.records
                        .iter()
                        .filter(|rec| m.train.contains(&s.site_id, rec.date) || m.validation.contains(&s.site_id, rec.date))
                        .map(move |rec| v.get(&rec.driver))
                });
                Ok((v, observed_grid(seen, c.grid_points).with_context(|| format!("grid for {v}"))?))
            })
            .collect::<Result<Vec<_>>>()?;
        entries.extend(seasonal_ice(kind.name(), model, site, year, &grids, c.mode)?);
    }
    if entries.is_empty() {
        return Err(usage(format!("site {site_id} has no records in the seasonal windows of {year}")));
    }
    export_report(&entries, &r.out, "ice")?;
    Provenance::new("ice", r.seed, &c)?
        .input("bundle", &a.bundle)?
        .input("data", &a.data)?
        .write(&r.out)?;
    println!("wrote {} ICE summaries for {site_id} {year} ({})", entries.len(), c.mode);
    Ok(())
}

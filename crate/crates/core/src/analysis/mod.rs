//! Individual conditional expectation (ICE) curves over seasonal windows and
//! their export.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::couplings::{CoupledModel, CouplingError};
use crate::data::SiteDataset;
use crate::process_model::{DriverRecord, ModelState};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid ICE request: {0}")]
    Invalid(String),
    #[error("unknown ICE variable {0:?}; expected one of tair, vpd, par, precip, fapar")]
    UnknownVariable(String),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Climate drivers that can be swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IceVariable {
    Tair,
    Vpd,
    Par,
    Precip,
    Fapar,
}

impl IceVariable {
    pub const ALL: [IceVariable; 5] = [
        IceVariable::Tair,
        IceVariable::Vpd,
        IceVariable::Par,
        IceVariable::Precip,
        IceVariable::Fapar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IceVariable::Tair => "tair",
            IceVariable::Vpd => "vpd",
            IceVariable::Par => "par",
            IceVariable::Precip => "precip",
            IceVariable::Fapar => "fapar",
        }
    }

    pub fn get(self, d: &DriverRecord) -> f64 {
        match self {
            IceVariable::Tair => d.t_air,
            IceVariable::Vpd => d.vpd,
            IceVariable::Par => d.par,
            IceVariable::Precip => d.precip,
            IceVariable::Fapar => d.fapar,
        }
    }

    /// Copy of `d` with this variable replaced by `value` (raw units).
    pub fn substitute(self, d: &DriverRecord, value: f64) -> DriverRecord {
        let mut out = *d;
        match self {
            IceVariable::Tair => out.t_air = value,
            IceVariable::Vpd => out.vpd = value,
            IceVariable::Par => out.par = value,
            IceVariable::Precip => out.precip = value,
            IceVariable::Fapar => out.fapar = value,
        }
        out
    }
}

impl fmt::Display for IceVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IceVariable {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IceVariable::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| AnalysisError::UnknownVariable(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Spring,
    Summer,
    Autumn,
    Winter,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Spring, Season::Summer, Season::Autumn, Season::Winter];

    pub fn name(self) -> &'static str {
        match self {
            Season::Spring => "spring",
            Season::Summer => "summer",
            Season::Autumn => "autumn",
            Season::Winter => "winter",
        }
    }

    /// Record day as (month, day).
    pub fn record_day(self) -> (u32, u32) {
        match self {
            Season::Spring => (3, 20),
            Season::Summer => (6, 21),
            Season::Autumn => (9, 20),
            Season::Winter => (12, 21),
        }
    }
}

/// Days within this many days of the record day form its window.
pub const WINDOW_HALF_WIDTH: i64 = 7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonalWindow {
    pub season: Season,
    pub record_day: NaiveDate,
    /// Record day ± 7, clipped to the calendar year.
    pub days: Vec<NaiveDate>,
}

impl SeasonalWindow {
    /// Indices of the dataset records falling inside the window.
    pub fn indices(&self, dataset: &SiteDataset) -> Vec<usize> {
        dataset
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| self.days.contains(&r.date))
            .map(|(i, _)| i)
            .collect()
    }
}

/// The four seasonal windows of `year`.
pub fn seasonal_windows(year: i32) -> Result<[SeasonalWindow; 4], AnalysisError> {
    let mk = |season: Season| -> Result<SeasonalWindow, AnalysisError> {
        let (m, d) = season.record_day();
        let record_day = NaiveDate::from_ymd_opt(year, m, d)
            .ok_or_else(|| AnalysisError::Invalid(format!("year {year} out of range")))?;
        let days = (-WINDOW_HALF_WIDTH..=WINDOW_HALF_WIDTH)
            .filter_map(|k| record_day.checked_add_signed(chrono::Duration::days(k)))
            .filter(|d| d.year() == year)
            .collect();
        Ok(SeasonalWindow {
            season,
            record_day,
            days,
        })
    };
    Ok([
        mk(Season::Spring)?,
        mk(Season::Summer)?,
        mk(Season::Autumn)?,
        mk(Season::Winter)?,
    ])
}

/// How process-model state enters a swept day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IceMode {
    /// Re-run the model over the sequence with the one-day substitution.
    #[default]
    Resimulate,
    /// Hold the state entering the day at its observed-run value.
    FrozenState,
}

impl FromStr for IceMode {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "resimulate" => Ok(IceMode::Resimulate),
            "frozen-state" => Ok(IceMode::FrozenState),
            _ => Err(AnalysisError::Invalid(format!(
                "unknown ICE mode {s:?}; expected resimulate or frozen-state"
            ))),
        }
    }
}

impl fmt::Display for IceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IceMode::Resimulate => "resimulate",
            IceMode::FrozenState => "frozen-state",
        })
    }
}

/// `n` evenly spaced points over the observed range of `variable`.
pub fn default_grid(dataset: &SiteDataset, variable: IceVariable, n: usize) -> Result<Vec<f64>, AnalysisError> {
    observed_grid(dataset.records.iter().map(|r| variable.get(&r.driver)), n)
        .map_err(|e| match e {
            AnalysisError::Invalid(m) => AnalysisError::Invalid(format!("{variable}: {m}")),
            other => other,
        })
}

/// `n` evenly spaced points from the minimum to the maximum of `values`.
pub fn observed_grid(values: impl IntoIterator<Item = f64>, n: usize) -> Result<Vec<f64>, AnalysisError> {
    if n < 2 {
        return Err(AnalysisError::Invalid("grid needs at least 2 points".into()));
    }
    let (lo, hi) = values
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !(lo < hi) {
        return Err(AnalysisError::Invalid("no spread to sweep".into()));
    }
    Ok((0..n)
        .map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect())
}

pub const DEFAULT_GRID_POINTS: usize = 50;

/// Curves of one variable over a set of days. `nn` and `pm` hold the
/// additive parts where the model has them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IceResult {
    pub variable: IceVariable,
    pub mode: IceMode,
    pub grid: Vec<f64>,
    pub days: Vec<usize>,
    /// `curves[d][g]`: prediction for day `days[d]` at `grid[g]`.
    pub curves: Vec<Vec<f64>>,
    pub nn: Option<Vec<Vec<f64>>>,
    pub pm: Option<Vec<Vec<f64>>>,
}

/// Sweeps `variable` over `grid` for each of the dataset's `days`, holding
/// the other drivers at that day's observed values.
pub fn ice_curves(
    model: &CoupledModel,
    dataset: &SiteDataset,
    variable: IceVariable,
    grid: &[f64],
    days: &[usize],
    mode: IceMode,
) -> Result<IceResult, AnalysisError> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(AnalysisError::Invalid("grid must be non-empty and strictly increasing".into()));
    }
    if days.is_empty() || days.iter().any(|&k| k >= dataset.len()) {
        return Err(AnalysisError::Invalid("day indices empty or out of range".into()));
    }
    let drivers = dataset.drivers();
    let observed = match mode {
        IceMode::FrozenState => model.pm_trace(&drivers)?,
        IceMode::Resimulate => None,
    };
    let per_day: Vec<Vec<(f64, Option<f64>, Option<f64>)>> = days
        .par_iter()
        .map(|&k| -> Result<_, AnalysisError> {
            let prefix_state: Option<ModelState> = match (mode, k) {
                (IceMode::FrozenState, _) => observed.as_ref().map(|t| t[k].0),
                // The substituted day cannot influence the state entering it
                // (except through the initial state on day 0), so the prefix
                // is simulated once per day rather than once per grid point.
                (IceMode::Resimulate, 0) => None,
                (IceMode::Resimulate, _) => model.pm_trace(&drivers[..=k])?.map(|t| t[k].0),
            };
            grid.iter()
                .map(|&g| {
                    let d = variable.substitute(&drivers[k], g);
                    let state = if mode == IceMode::Resimulate && k == 0 {
                        model.pm_trace(&[d])?.map(|t| t[0].0)
                    } else {
                        prefix_state
                    };
                    let p = model.predict_day(&d, state.as_ref())?;
                    Ok((p.total, p.nn, p.pm))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let part = |f: fn(&(f64, Option<f64>, Option<f64>)) -> Option<f64>| -> Option<Vec<Vec<f64>>> {
        per_day
            .iter()
            .map(|c| c.iter().map(f).collect::<Option<Vec<f64>>>())
            .collect()
    };
    Ok(IceResult {
        variable,
        mode,
        grid: grid.to_vec(),
        days: days.to_vec(),
        curves: per_day.iter().map(|c| c.iter().map(|v| v.0).collect()).collect(),
        nn: part(|v| v.1),
        pm: part(|v| v.2),
    })
}

/// Mean and empirical 2.5 / 97.5 percentiles across days at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IceSummary {
    pub grid: f64,
    pub mean: f64,
    pub lower95: f64,
    pub upper95: f64,
}

/// Linear-interpolation percentile (`q` in [0, 1]) of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let (i, frac) = (h.floor() as usize, h - h.floor());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Per-grid-point summary across the curves. A single curve yields a
/// degenerate interval.
pub fn summarize_ice(result: &IceResult) -> Result<Vec<IceSummary>, AnalysisError> {
    if result.curves.is_empty() {
        return Err(AnalysisError::Invalid("no curves to summarize".into()));
    }
    Ok(result
        .grid
        .iter()
        .enumerate()
        .map(|(g, &x)| {
            let mut col: Vec<f64> = result.curves.iter().map(|c| c[g]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            col.sort_by(f64::total_cmp);
            IceSummary {
                grid: x,
                mean,
                lower95: percentile(&col, 0.025),
                upper95: percentile(&col, 0.975),
            }
        })
        .collect())
}

/// One summarized ICE analysis, labelled for export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IceEntry {
    pub model: String,
    pub variable: IceVariable,
    pub window: Season,
    pub mode: IceMode,
    pub n_days: usize,
    pub summary: Vec<IceSummary>,
}

/// Column order of the exported ICE table.
pub const ICE_CSV_COLUMNS: [&str; 8] = [
    "model",
    "variable",
    "window",
    "grid_index",
    "grid_value",
    "mean",
    "lower95",
    "upper95",
];

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Tidy CSV, one row per model × variable × window × grid point.
pub fn ice_csv(entries: &[IceEntry]) -> Result<String, AnalysisError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ICE_CSV_COLUMNS)?;
    for e in entries {
        for (i, s) in e.summary.iter().enumerate() {
            w.write_record([
                e.model.clone(),
                e.variable.name().to_string(),
                e.window.name().to_string(),
                i.to_string(),
                fmt_float(s.grid),
                fmt_float(s.mean),
                fmt_float(s.lower95),
                fmt_float(s.upper95),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| AnalysisError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Metadata document accompanying the ICE table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IceMetadata {
    pub columns: Vec<String>,
    pub rows: usize,
    pub entries: Vec<IceEntryMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IceEntryMeta {
    pub model: String,
    pub variable: IceVariable,
    pub window: Season,
    pub mode: IceMode,
    pub n_days: usize,
    pub grid_points: usize,
}

pub fn ice_metadata(entries: &[IceEntry]) -> IceMetadata {
    IceMetadata {
        columns: ICE_CSV_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows: entries.iter().map(|e| e.summary.len()).sum(),
        entries: entries
            .iter()
            .map(|e| IceEntryMeta {
                model: e.model.clone(),
                variable: e.variable,
                window: e.window,
                mode: e.mode,
                n_days: e.n_days,
                grid_points: e.summary.len(),
            })
            .collect(),
    }
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn export_report(entries: &[IceEntry], dir: &std::path::Path, stem: &str) -> Result<(), AnalysisError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{stem}.csv")), ice_csv(entries)?)?;
    let meta = serde_json::to_string_pretty(&ice_metadata(entries))?;
    std::fs::write(dir.join(format!("{stem}.json")), meta + "\n")?;
    Ok(())
}

/// ICE summaries for each `(variable, grid)` pair and each seasonal window
/// of `year` that has records in `dataset`.
pub fn seasonal_ice(
    label: &str,
    model: &CoupledModel,
    dataset: &SiteDataset,
    year: i32,
    grids: &[(IceVariable, Vec<f64>)],
    mode: IceMode,
) -> Result<Vec<IceEntry>, AnalysisError> {
    let windows = seasonal_windows(year)?;
    let mut out = Vec::new();
    for (v, grid) in grids {
        for w in &windows {
            let days = w.indices(dataset);
            if days.is_empty() {
                continue;
            }
            let r = ice_curves(model, dataset, *v, grid, &days, mode)?;
            out.push(IceEntry {
                model: label.to_string(),
                variable: *v,
                window: w.season,
                mode,
                n_days: days.len(),
                summary: summarize_ice(&r)?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;

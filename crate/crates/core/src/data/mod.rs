//! Site datasets, unit conversions, normalization and synthetic data.

mod csv_io;
mod prior;
mod synthetic;
mod units;
mod weather;

use std::collections::BTreeSet;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::process_model::{DriverRecord, ProcessError};

pub use csv_io::{load_csv, read_csv, write_csv, ConversionProfile, CSV_COLUMNS};
pub use prior::{generate_pretraining_set, sample_parameters_lhs, ParameterPrior, LHS_PARAMS};
pub use synthetic::SyntheticSites;
pub use units::{convert_gpp, convert_radiation, fill_fapar, PhysicalConstants, SECONDS_PER_DAY};
pub use weather::{
    cholesky_psd, simulate_weather, simulate_weather_days, simulate_weather_with, GroupCurves, HarmonicCurve, WeatherSimConfig,
    CO2_FIXED_PPM, WEATHER_VARIABLES,
};

/// Names of the five climate covariates fed to networks, in feature order.
pub const COVARIATES: [&str; 5] = ["tair", "vpd", "par", "precip", "fapar"];

/// Divisor of the cyclic day-of-year encoding (kept at 365 in leap years).
pub const DOY_PERIOD: f64 = 365.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("site {site}: date {date} is not after the previous record")]
    NonMonotoneDate { site: String, date: NaiveDate },
    #[error("site {site}: duplicate date {date}")]
    DuplicateDate { site: String, date: NaiveDate },
    #[error("dataset is empty")]
    Empty,
    #[error("variable {0} has zero spread; cannot normalize")]
    ZeroSpread(String),
    #[error("{0} is negative")]
    Negative(&'static str),
    #[error("day of year {0} is outside 1..=366")]
    DoyOutOfRange(f64),
    #[error("every fAPAR value is missing")]
    AllGaps,
    #[error("noise covariance is not positive semidefinite")]
    NotPsd,
    #[error("invalid weather configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One site-day: drivers plus the observed GPP target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub date: NaiveDate,
    pub driver: DriverRecord,
    /// gC m⁻² d⁻¹
    pub gpp: f64,
}

/// Day-ordered records of one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteDataset {
    pub site_id: String,
    pub records: Vec<Record>,
}

impl SiteDataset {
    /// Builds a dataset, checking strict date order and finite targets.
    pub fn new(site_id: impl Into<String>, records: Vec<Record>) -> Result<Self, DataError> {
        let ds = Self {
            site_id: site_id.into(),
            records,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for (i, r) in self.records.iter().enumerate() {
            r.driver.validate()?;
            if !r.gpp.is_finite() {
                return Err(DataError::Parse {
                    line: i as u64 + 1,
                    message: format!("non-finite gpp on {}", r.date),
                });
            }
            if i > 0 {
                let prev = self.records[i - 1].date;
                if r.date == prev {
                    return Err(DataError::DuplicateDate {
                        site: self.site_id.clone(),
                        date: r.date,
                    });
                }
                if r.date < prev {
                    return Err(DataError::NonMonotoneDate {
                        site: self.site_id.clone(),
                        date: r.date,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn drivers(&self) -> Vec<DriverRecord> {
        self.records.iter().map(|r| r.driver).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.gpp).collect()
    }

    /// Calendar years covered, ascending.
    pub fn years(&self) -> Vec<i32> {
        self.records
            .iter()
            .map(|r| r.date.year())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Records falling in `year`, in order.
    pub fn year_indices(&self, year: i32) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.date.year() == year)
            .map(|(i, _)| i)
            .collect()
    }

    /// Sub-dataset of the given record indices (kept in index order).
    pub fn subset(&self, indices: &[usize]) -> SiteDataset {
        SiteDataset {
            site_id: self.site_id.clone(),
            records: indices.iter().map(|&i| self.records[i]).collect(),
        }
    }
}

/// Keeps every seventh record (indices 0, 7, 14, …).
pub fn thin_weekly(dataset: &SiteDataset) -> SiteDataset {
    SiteDataset {
        site_id: dataset.site_id.clone(),
        records: dataset.records.iter().step_by(7).copied().collect(),
    }
}

/// `(sin, cos)` of `2π d / 365`.
pub fn encode_doy(d: f64) -> Result<(f64, f64), DataError> {
    if !(1.0..=366.0).contains(&d) {
        return Err(DataError::DoyOutOfRange(d));
    }
    let angle = d * 2.0 * std::f64::consts::PI / DOY_PERIOD;
    Ok((angle.sin(), angle.cos()))
}

/// The five climate covariates of a driver record in [`COVARIATES`] order.
pub fn covariates(d: &DriverRecord) -> [f64; 5] {
    [d.t_air, d.vpd, d.par, d.precip, d.fapar]
}

/// Per-variable mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Fits statistics to `rows` (each row one sample, one value per name).
    pub fn fit<S: AsRef<str>>(names: &[S], rows: &[Vec<f64>]) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        let k = names.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; k];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; k];
        for r in rows {
            for j in 0..k {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        for (j, s) in std.iter().enumerate() {
            if !(*s > 0.0) {
                return Err(DataError::ZeroSpread(names[j].as_ref().to_string()));
            }
        }
        Ok(Self {
            names: names.iter().map(|s| s.as_ref().to_string()).collect(),
            mean,
            std,
        })
    }

    /// Stats of the five covariates over `records`.
    pub fn fit_covariates(records: &[Record]) -> Result<Self, DataError> {
        let rows: Vec<Vec<f64>> = records
            .iter()
            .map(|r| covariates(&r.driver).to_vec())
            .collect();
        Self::fit(&COVARIATES, &rows)
    }

    pub fn normalize(&self, j: usize, x: f64) -> f64 {
        zscore(x, self.mean[j], self.std[j])
    }

    pub fn denormalize(&self, j: usize, z: f64) -> f64 {
        z * self.std[j] + self.mean[j]
    }

    pub fn normalize_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, x)| self.normalize(j, *x))
            .collect()
    }
}

/// `(x − μ) / σ`.
pub fn zscore(x: f64, mean: f64, std: f64) -> f64 {
    (x - mean) / std
}

/// Normalizes a whole series, rejecting a zero spread by name.
pub fn zscore_series(series: &[f64], mean: f64, std: f64, name: &str) -> Result<Vec<f64>, DataError> {
    if !(std > 0.0) {
        return Err(DataError::ZeroSpread(name.to_string()));
    }
    Ok(series.iter().map(|x| zscore(*x, mean, std)).collect())
}

#[cfg(test)]
mod tests;

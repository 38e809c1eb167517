use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{simulate_weather_with, DataError, Record, SiteDataset, WeatherSimConfig};
use crate::autodiff::Real;
use crate::process_model::{simulate, ModelState, PrelesParams, N_PARAMS, PARAM_NAMES};

/// Parameters varied by the Latin hypercube; all others stay at defaults.
pub const LHS_PARAMS: [&str; 5] = ["beta", "x0", "gamma", "alpha", "chi"];

/// Independent uniform boxes `[lo, hi]` per process-model parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterPrior {
    pub lo: PrelesParams,
    pub hi: PrelesParams,
}

impl Default for ParameterPrior {
    fn default() -> Self {
        Self::narrow()
    }
}

impl ParameterPrior {
    /// Tight boxes around the default calibration.
    pub fn narrow() -> Self {
        Self {
            lo: PrelesParams {
                beta: 0.45,
                x0: -6.0,
                gamma: 0.02,
                kappa: -0.6,
                alpha: 0.1,
                chi: 0.05,
                tau: 8.0,
                soil_capacity: 120.0,
                drainage_rate: 0.3,
                snow_melt_coeff: 2.0,
                wilting_fraction: 0.05,
                et_shape: 0.3,
                smax: 15.0,
            },
            hi: PrelesParams {
                beta: 0.85,
                x0: -2.0,
                gamma: 0.04,
                kappa: -0.2,
                alpha: 0.3,
                chi: 0.15,
                tau: 18.0,
                soil_capacity: 200.0,
                drainage_rate: 0.7,
                snow_melt_coeff: 4.0,
                wilting_fraction: 0.15,
                et_shape: 0.5,
                smax: 21.0,
            },
        }
    }

    /// Broad boxes within which every combination is a valid parameter set;
    /// used to bound learned and calibrated parameters.
    pub fn wide() -> Self {
        Self {
            lo: PrelesParams {
                beta: 0.2,
                x0: -10.0,
                gamma: 0.005,
                kappa: -1.5,
                alpha: 0.01,
                chi: 0.0,
                tau: 2.0,
                soil_capacity: 40.0,
                drainage_rate: 0.05,
                snow_melt_coeff: 0.5,
                wilting_fraction: 0.01,
                et_shape: 0.32,
                smax: 8.0,
            },
            hi: PrelesParams {
                beta: 1.5,
                x0: 2.0,
                gamma: 0.1,
                kappa: 0.0,
                alpha: 0.6,
                chi: 0.4,
                tau: 30.0,
                soil_capacity: 300.0,
                drainage_rate: 0.95,
                snow_melt_coeff: 6.0,
                wilting_fraction: 0.3,
                et_shape: 0.8,
                smax: 30.0,
            },
        }
    }

    /// Degenerate prior fixed at `p`.
    pub fn point(p: PrelesParams) -> Self {
        Self { lo: p, hi: p }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let d = PrelesParams::default().to_array();
        for (k, (lo, hi)) in self.lo.to_array().into_iter().zip(self.hi.to_array()).enumerate() {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(DataError::InvalidPrior(format!(
                    "{}: lo {lo} must not exceed hi {hi}",
                    PARAM_NAMES[k]
                )));
            }
            if lo < hi && !(lo..=hi).contains(&d[k]) {
                return Err(DataError::InvalidPrior(format!(
                    "{}: default {} outside [{lo}, {hi}]",
                    PARAM_NAMES[k], d[k]
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &PrelesParams) -> bool {
        let (lo, hi) = (self.lo.to_array(), self.hi.to_array());
        p.to_array()
            .iter()
            .enumerate()
            .all(|(k, v)| (lo[k]..=hi[k]).contains(v))
    }

    /// Maps unbounded values into the box: `lo + (hi − lo)·sigmoid(x)`.
    pub fn squash<R: Real>(&self, raw: &[R; N_PARAMS]) -> PrelesParams<R> {
        let (lo, hi) = (self.lo.to_array(), self.hi.to_array());
        PrelesParams::from_array(std::array::from_fn(|k| raw[k].sigmoid() * (hi[k] - lo[k]) + lo[k]))
    }

    /// Inverse of [`squash`](Self::squash) for points strictly inside the box.
    pub fn unsquash(&self, p: &PrelesParams) -> [f64; N_PARAMS] {
        let u = self.to_unit(p);
        u.map(|u| {
            let u = u.clamp(1e-9, 1.0 - 1e-9);
            (u / (1.0 - u)).ln()
        })
    }

    /// Coordinates in `[0, 1]` relative to the box (0 for collapsed boxes).
    pub fn to_unit(&self, p: &PrelesParams) -> [f64; N_PARAMS] {
        let (lo, hi, v) = (self.lo.to_array(), self.hi.to_array(), p.to_array());
        std::array::from_fn(|k| {
            if hi[k] > lo[k] {
                (v[k] - lo[k]) / (hi[k] - lo[k])
            } else {
                0.0
            }
        })
    }

    pub fn from_unit(&self, u: &[f64; N_PARAMS]) -> PrelesParams {
        let (lo, hi) = (self.lo.to_array(), self.hi.to_array());
        PrelesParams::from_array(std::array::from_fn(|k| lo[k] + u[k] * (hi[k] - lo[k])))
    }

    /// Clamps each parameter into its box.
    pub fn project(&self, p: &PrelesParams) -> PrelesParams {
        let (lo, hi, v) = (self.lo.to_array(), self.hi.to_array(), p.to_array());
        PrelesParams::from_array(std::array::from_fn(|k| v[k].clamp(lo[k], hi[k])))
    }
}

/// Latin hypercube over [`LHS_PARAMS`]: in each dimension the `n` draws
/// occupy the `n` equal-width strata once each, jittered uniformly inside
/// their stratum.
pub fn sample_parameters_lhs<G: Rng + ?Sized>(prior: &ParameterPrior, n: usize, rng: &mut G) -> Vec<PrelesParams> {
    let defaults = PrelesParams::default().to_array();
    let (lo, hi) = (prior.lo.to_array(), prior.hi.to_array());
    let mut samples = vec![defaults; n];
    for name in LHS_PARAMS {
        let k = crate::process_model::param_index(name).expect("known parameter");
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (s, stratum) in samples.iter_mut().zip(strata) {
            let u = (stratum as f64 + rng.random::<f64>()) / n as f64;
            s[k] = lo[k] + u * (hi[k] - lo[k]);
        }
    }
    samples.into_iter().map(PrelesParams::from_array).collect()
}

/// Simulated training data: for each LHS parameter draw, fresh weather for
/// `days` days (cycling through the configured groups) and the process
/// model's GPP as the target. Dates run on from 2001-01-01.
pub fn generate_pretraining_set(
    prior: &ParameterPrior,
    weather: &WeatherSimConfig,
    n_samples: usize,
    days: usize,
) -> Result<SiteDataset, DataError> {
    prior.validate()?;
    if weather.groups.is_empty() {
        return Err(DataError::InvalidConfig("no weather groups".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(weather.seed);
    let samples = sample_parameters_lhs(prior, n_samples, &mut rng);
    let groups: Vec<&String> = weather.groups.keys().collect();
    let start = NaiveDate::from_ymd_opt(2001, 1, 1).expect("valid date");
    let mut records = Vec::with_capacity(n_samples * days);
    for (i, params) in samples.iter().enumerate() {
        params.validate()?;
        let drivers = simulate_weather_with(weather, days, groups[i % groups.len()], 1, &mut rng)?;
        if drivers.is_empty() {
            continue;
        }
        let out = simulate(params, &drivers, ModelState::initial(params, &drivers[0]))?;
        for (d, o) in drivers.into_iter().zip(out) {
            let date = start + chrono::Days::new(records.len() as u64);
            records.push(Record {
                date,
                driver: d,
                gpp: o.gpp,
            });
        }
    }
    Ok(SiteDataset {
        site_id: "simulated".into(),
        records,
    })
}

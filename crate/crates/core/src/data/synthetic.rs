use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{simulate_weather_days, DataError, Record, SiteDataset, WeatherSimConfig};
use crate::process_model::{simulate, ModelState, PrelesParams};

/// Synthetic observation sites: simulated weather, process-model GPP with a
/// known smooth residual `amplitude · tanh(T / scale)` and Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSites {
    pub weather: WeatherSimConfig,
    /// One site per entry (repeats allowed), named `site<k>-<group>`.
    pub groups: Vec<String>,
    pub years: usize,
    pub start_year: i32,
    pub params: PrelesParams,
    pub residual_amplitude: f64,
    pub residual_scale: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SyntheticSites {
    fn default() -> Self {
        let weather = WeatherSimConfig::default();
        let groups = weather.groups.keys().cloned().collect();
        Self {
            weather,
            groups,
            years: 3,
            start_year: 2001,
            params: PrelesParams::default(),
            residual_amplitude: 0.5,
            residual_scale: 10.0,
            noise_sd: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSites {
    /// The known residual added to process-model GPP.
    pub fn residual(&self, t_air: f64) -> f64 {
        self.residual_amplitude * (t_air / self.residual_scale).tanh()
    }

    /// Generates the sites over the calendar years `start_year ..
    /// start_year + years`, one record per calendar day.
    pub fn generate(&self) -> Result<Vec<SiteDataset>, DataError> {
        if !(self.noise_sd >= 0.0) {
            return Err(DataError::InvalidConfig("noise_sd must be >= 0".into()));
        }
        self.params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, self.noise_sd)
            .map_err(|e| DataError::InvalidConfig(e.to_string()))?;
        let first = NaiveDate::from_ymd_opt(self.start_year, 1, 1)
            .ok_or_else(|| DataError::InvalidConfig(format!("bad year {}", self.start_year)))?;
        let end = NaiveDate::from_ymd_opt(self.start_year + self.years as i32, 1, 1)
            .ok_or_else(|| DataError::InvalidConfig("bad year span".into()))?;
        let dates: Vec<NaiveDate> = first.iter_days().take_while(|d| *d < end).collect();
        let doys: Vec<u16> = dates.iter().map(|d| d.ordinal() as u16).collect();
        let mut sites = Vec::with_capacity(self.groups.len());
        for (k, group) in self.groups.iter().enumerate() {
            let drivers = simulate_weather_days(&self.weather, &doys, group, &mut rng)?;
            if drivers.is_empty() {
                return Err(DataError::Empty);
            }
            let p = &self.params;
            let out = simulate(p, &drivers, ModelState::initial(p, &drivers[0]))?;
            let records = dates
                .iter()
                .zip(&drivers)
                .zip(&out)
                .map(|((date, d), o)| Record {
                    date: *date,
                    driver: *d,
                    gpp: o.gpp + self.residual(d.t_air) + noise.sample(&mut rng),
                })
                .collect();
            sites.push(SiteDataset::new(format!("site{}-{group}", k + 1), records)?);
        }
        Ok(sites)
    }
}

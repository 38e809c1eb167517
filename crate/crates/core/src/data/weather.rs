use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, DOY_PERIOD};
use crate::process_model::DriverRecord;

pub const CO2_FIXED_PPM: f64 = 380.0;

/// Simulated variables in noise-vector order.
pub const WEATHER_VARIABLES: [&str; 5] = ["tair", "vpd", "par", "precip", "fapar"];

/// `β₀ + Σ_h a_h sin(2π h d/365) + b_h cos(2π h d/365)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicCurve {
    pub intercept: f64,
    pub sin: Vec<f64>,
    pub cos: Vec<f64>,
}

impl HarmonicCurve {
    pub fn eval(&self, doy: f64) -> f64 {
        let w = 2.0 * PI * doy / DOY_PERIOD;
        let mut v = self.intercept;
        for (h, a) in self.sin.iter().enumerate() {
            v += a * (w * (h + 1) as f64).sin();
        }
        for (h, b) in self.cos.iter().enumerate() {
            v += b * (w * (h + 1) as f64).cos();
        }
        v
    }

    fn first_harmonic(intercept: f64, sin: f64, cos: f64) -> Self {
        Self {
            intercept,
            sin: vec![sin, 0.0, 0.0],
            cos: vec![cos, 0.0, 0.0],
        }
    }
}

/// Seasonal curves of one site or year group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCurves {
    pub tair: HarmonicCurve,
    pub vpd: HarmonicCurve,
    pub par: HarmonicCurve,
    pub precip: HarmonicCurve,
    pub fapar: HarmonicCurve,
}

impl GroupCurves {
    fn eval(&self, doy: f64) -> [f64; 5] {
        [
            self.tair.eval(doy),
            self.vpd.eval(doy),
            self.par.eval(doy),
            self.precip.eval(doy),
            self.fapar.eval(doy),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherSimConfig {
    pub version: u32,
    pub groups: BTreeMap<String, GroupCurves>,
    /// 5×5 noise covariance, row-major, in [`WEATHER_VARIABLES`] order.
    pub noise_cov: Vec<f64>,
    pub co2: f64,
    pub seed: u64,
}

impl Default for WeatherSimConfig {
    /// A boreal-forest-like climate with a cool and a warm group.
    fn default() -> Self {
        let h = HarmonicCurve::first_harmonic;
        let cool = GroupCurves {
            tair: h(4.0, -3.0, -11.0),
            vpd: h(0.35, -0.05, -0.3),
            par: h(17.0, 2.0, -15.0),
            precip: h(1.8, 0.2, -0.4),
            fapar: h(0.6, 0.0, -0.2),
        };
        let warm = GroupCurves {
            tair: h(8.0, -2.5, -10.0),
            vpd: h(0.5, -0.05, -0.4),
            par: h(20.0, 2.0, -14.0),
            precip: h(1.5, 0.3, -0.2),
            fapar: h(0.65, 0.0, -0.15),
        };
        #[rustfmt::skip]
        let noise_cov = vec![
            4.0,  0.12,  2.4,  0.0, 0.0,
            0.12, 0.01,  0.15, 0.0, 0.0,
            2.4,  0.15,  9.0, -2.5, 0.0,
            0.0,  0.0,  -2.5,  6.0, 0.0,
            0.0,  0.0,   0.0,  0.0, 0.0004,
        ];
        Self {
            version: 1,
            groups: BTreeMap::from([("cool".to_string(), cool), ("warm".to_string(), warm)]),
            noise_cov,
            co2: CO2_FIXED_PPM,
            seed: 0,
        }
    }
}

impl WeatherSimConfig {
    pub fn group(&self, name: &str) -> Result<&GroupCurves, DataError> {
        self.groups
            .get(name)
            .ok_or_else(|| DataError::InvalidConfig(format!("unknown group {name:?}")))
    }

    pub fn validate(&self) -> Result<[[f64; 5]; 5], DataError> {
        if self.noise_cov.len() != 25 {
            return Err(DataError::InvalidConfig(format!(
                "noise covariance needs 25 entries, got {}",
                self.noise_cov.len()
            )));
        }
        if !(self.co2 > 0.0) {
            return Err(DataError::InvalidConfig("co2 must be positive".into()));
        }
        let mut cov = [[0.0; 5]; 5];
        for i in 0..5 {
            for j in 0..5 {
                cov[i][j] = self.noise_cov[i * 5 + j];
            }
        }
        cholesky_psd(&cov)
    }
}

/// Lower Cholesky factor of a symmetric positive semidefinite matrix.
/// Zero pivots (up to round-off) yield zero columns.
pub fn cholesky_psd<const N: usize>(a: &[[f64; N]; N]) -> Result<[[f64; N]; N], DataError> {
    let scale = (0..N).map(|i| a[i][i].abs()).fold(0.0, f64::max).max(1e-300);
    let tol = 1e-12 * scale;
    for i in 0..N {
        for j in 0..i {
            if !a[i][j].is_finite() || (a[i][j] - a[j][i]).abs() > tol {
                return Err(DataError::NotPsd);
            }
        }
    }
    let mut l = [[0.0; N]; N];
    for j in 0..N {
        let d = a[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if d < -tol || !d.is_finite() {
            return Err(DataError::NotPsd);
        }
        if d <= tol {
            for i in j + 1..N {
                let r = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                if r.abs() > tol.sqrt() * scale.sqrt() {
                    return Err(DataError::NotPsd);
                }
            }
            continue;
        }
        let ljj = d.sqrt();
        l[j][j] = ljj;
        for i in j + 1..N {
            let r = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = r / ljj;
        }
    }
    Ok(l)
}

/// Simulates `n_days` of weather for `group`, starting at day of year 1,
/// using the configuration's seed.
pub fn simulate_weather(config: &WeatherSimConfig, n_days: usize, group: &str) -> Result<Vec<DriverRecord>, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    simulate_weather_with(config, n_days, group, 1, &mut rng)
}

/// Simulates weather drawing noise from `rng`. Days cycle through a
/// 365-day year starting at `start_doy`.
pub fn simulate_weather_with<G: Rng + ?Sized>(
    config: &WeatherSimConfig,
    n_days: usize,
    group: &str,
    start_doy: u16,
    rng: &mut G,
) -> Result<Vec<DriverRecord>, DataError> {
    if !(1..=365).contains(&start_doy) {
        return Err(DataError::DoyOutOfRange(start_doy as f64));
    }
    let doys: Vec<u16> = (0..n_days)
        .map(|i| ((start_doy as usize - 1 + i) % 365 + 1) as u16)
        .collect();
    simulate_weather_days(config, &doys, group, rng)
}

/// Simulates one day of weather per entry of `doys`.
pub fn simulate_weather_days<G: Rng + ?Sized>(
    config: &WeatherSimConfig,
    doys: &[u16],
    group: &str,
    rng: &mut G,
) -> Result<Vec<DriverRecord>, DataError> {
    let l = config.validate()?;
    let curves = config.group(group)?;
    let mut out = Vec::with_capacity(doys.len());
    for &doy in doys {
        if !(1..=366).contains(&doy) {
            return Err(DataError::DoyOutOfRange(doy as f64));
        }
        let mut v = curves.eval(doy as f64);
        let z: [f64; 5] = std::array::from_fn(|_| rng.sample(StandardNormal));
        for (r, vr) in v.iter_mut().enumerate() {
            *vr += (0..=r).map(|k| l[r][k] * z[k]).sum::<f64>();
        }
        out.push(DriverRecord {
            t_air: v[0],
            vpd: v[1].max(0.0),
            par: v[2].max(0.0),
            precip: v[3].max(0.0),
            fapar: v[4].clamp(0.0, 1.0),
            co2: config.co2,
            doy,
        });
    }
    Ok(out)
}

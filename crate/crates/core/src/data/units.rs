use serde::{Deserialize, Serialize};

use super::DataError;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Constants of the radiation and carbon conversions.
///
/// The default values follow the preprocessing they reproduce, including its
/// 220 nm wavelength and Avogadro value; [`PhysicalConstants::codata`]
/// swaps in standard ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// J s
    pub planck_h: f64,
    /// m s⁻¹
    pub light_speed_c: f64,
    /// m
    pub wavelength: f64,
    /// mol⁻¹
    pub avogadro: f64,
    /// g mol⁻¹
    pub carbon_molar_mass: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            planck_h: 6.63e-34,
            light_speed_c: 2.99792458e8,
            wavelength: 2.2e-7,
            avogadro: 6.602e23,
            carbon_molar_mass: 12.011,
        }
    }
}

impl PhysicalConstants {
    /// CODATA 2018 values with a mid-PAR wavelength of 550 nm.
    pub fn codata() -> Self {
        Self {
            planck_h: 6.626_070_15e-34,
            light_speed_c: 2.997_924_58e8,
            wavelength: 5.5e-7,
            avogadro: 6.022_140_76e23,
            carbon_molar_mass: 12.011,
        }
    }

    /// Energy of one photon, `E = h c / λ`, in J.
    pub fn photon_energy(&self) -> f64 {
        self.planck_h * self.light_speed_c / self.wavelength
    }
}

/// Global radiation in J cm⁻² d⁻¹ to photon irradiance in mol m⁻² d⁻¹.
pub fn convert_radiation(global: f64, c: &PhysicalConstants) -> Result<f64, DataError> {
    if global < 0.0 {
        return Err(DataError::Negative("global radiation"));
    }
    Ok(global * 1e4 / (c.photon_energy() * c.avogadro))
}

/// Mean GPP flux in µmol CO₂ m⁻² s⁻¹ sustained for `seconds` to gC m⁻².
pub fn convert_gpp(gpp_umol: f64, seconds: f64, c: &PhysicalConstants) -> f64 {
    gpp_umol * seconds * c.carbon_molar_mass * 1e-6
}

/// Fills gaps of an 8-day fAPAR series and expands it to daily values.
///
/// Interior gaps take the mean of the nearest observed values on either side;
/// leading and trailing gaps take the nearest observed value. Each composite
/// value is repeated for 8 days and the result truncated to `n_days` when
/// given.
pub fn fill_fapar(series: &[Option<f64>], n_days: Option<usize>) -> Result<Vec<f64>, DataError> {
    let observed: Vec<usize> = series
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|_| i))
        .collect();
    if observed.is_empty() {
        return Err(DataError::AllGaps);
    }
    let filled: Vec<f64> = series
        .iter()
        .enumerate()
        .map(|(i, v)| match v {
            Some(x) => *x,
            None => {
                let before = observed.iter().rev().find(|&&j| j < i);
                let after = observed.iter().find(|&&j| j > i);
                match (before, after) {
                    (Some(&b), Some(&a)) => 0.5 * (series[b].unwrap() + series[a].unwrap()),
                    (Some(&b), None) => series[b].unwrap(),
                    (None, Some(&a)) => series[a].unwrap(),
                    (None, None) => unreachable!("at least one observed value"),
                }
            }
        })
        .collect();
    let mut daily: Vec<f64> = filled
        .iter()
        .flat_map(|v| std::iter::repeat_n(*v, 8))
        .collect();
    if let Some(n) = n_days {
        if n > daily.len() {
            return Err(DataError::InvalidConfig(format!(
                "{n} days requested from {} composites",
                series.len()
            )));
        }
        daily.truncate(n);
    }
    Ok(daily)
}

//! Semi-empirical light-use-efficiency model of daily GPP, evapotranspiration
//! and soil water.
//!
//! GPP on day k is `β · φ · fAPAR · f_L · f_D · f_W · f_S` where the four
//! modifiers account for light saturation, vapour pressure deficit, soil water
//! and temperature acclimation. Evapotranspiration follows GPP plus a
//! soil-limited evaporation term, and a three-pool water balance (snow,
//! surface, soil) threads state from one day to the next.
//!
//! Modifier forms:
//!
//! | modifier | form |
//! |----------|------|
//! | light    | `1 / (γ φ + 1)` |
//! | VPD      | `exp(κ D)` |
//! | soil     | linear ramp from `wilting_fraction` to [`GPP_WATER_THRESHOLD`] of capacity, clamped |
//! | acclim.  | linear ramp from `x0` to `smax`, clamped; state is an EMA of air temperature with time constant `τ` |
//!
//! ET is `α · P · sqrt(D + VPD_OFFSET) + χ · (1 − fAPAR) · φ · f_W,E`, with
//! `f_W,E` a ramp from `wilting_fraction` to `et_shape`. CO₂ is carried in the
//! driver record but does not enter these forms.
//!
//! Every function is generic over [`Real`]; driver data are plain `f64`.

mod params;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Real;

pub use params::{param_index, PrelesParams, N_PARAMS, PARAM_NAMES};

/// Relative soil water at and above which GPP is not water limited.
pub const GPP_WATER_THRESHOLD: f64 = 0.4;

/// Keeps the VPD coupling of transpiration differentiable at D = 0.
pub const VPD_OFFSET: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProcessError {
    #[error("parameter {name} = {value} {reason}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("driver field {field} = {value} is out of range")]
    InvalidDriver { field: &'static str, value: f64 },
    #[error("driver sequence is empty")]
    EmptyDrivers,
    #[error("non-finite {quantity} on day index {day}")]
    NonFinite { day: usize, quantity: &'static str },
}

/// One day of environmental drivers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverRecord {
    /// mean air temperature, °C
    pub t_air: f64,
    /// vapour pressure deficit, kPa
    pub vpd: f64,
    /// photosynthetically active radiation, mol m⁻² d⁻¹
    pub par: f64,
    /// precipitation, mm
    pub precip: f64,
    /// fraction of absorbed PAR
    pub fapar: f64,
    /// CO₂ concentration, ppm
    pub co2: f64,
    /// day of year, 1..=366
    pub doy: u16,
}

impl DriverRecord {
    pub fn validate(&self) -> Result<(), ProcessError> {
        let bad = |field, value| Err(ProcessError::InvalidDriver { field, value });
        if !self.t_air.is_finite() {
            return bad("t_air", self.t_air);
        }
        if !(self.vpd >= 0.0) || !self.vpd.is_finite() {
            return bad("vpd", self.vpd);
        }
        if !(self.par >= 0.0) || !self.par.is_finite() {
            return bad("par", self.par);
        }
        if !(self.precip >= 0.0) || !self.precip.is_finite() {
            return bad("precip", self.precip);
        }
        if !(0.0..=1.0).contains(&self.fapar) {
            return bad("fapar", self.fapar);
        }
        if !(self.co2 > 0.0) || !self.co2.is_finite() {
            return bad("co2", self.co2);
        }
        if !(1..=366).contains(&self.doy) {
            return bad("doy", self.doy as f64);
        }
        Ok(())
    }
}

/// Water pools and the delayed temperature state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelState<T = f64> {
    pub soil_water: T,
    pub surface_water: T,
    pub snow: T,
    pub acclim: T,
}

impl<R: Real> ModelState<R> {
    /// Soil at capacity, no snow or surface water, acclimation at the first
    /// day's air temperature.
    pub fn initial(params: &PrelesParams<R>, first: &DriverRecord) -> Self {
        let cap = params.soil_capacity;
        Self {
            soil_water: cap,
            surface_water: cap.lift(0.0),
            snow: cap.lift(0.0),
            acclim: cap.lift(first.t_air),
        }
    }

    pub fn values(&self) -> ModelState<f64> {
        ModelState {
            soil_water: self.soil_water.value(),
            surface_water: self.surface_water.value(),
            snow: self.snow.value(),
            acclim: self.acclim.value(),
        }
    }

    /// Total stored water, mm.
    pub fn storage(&self) -> R {
        self.soil_water + self.surface_water + self.snow
    }
}

/// Daily model outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput<T = f64> {
    /// gross primary production, gC m⁻² d⁻¹
    pub gpp: T,
    /// evapotranspiration actually withdrawn, mm d⁻¹
    pub et: T,
    /// soil water at the end of the day, mm
    pub soil_water: T,
}

impl<R: Real> ModelOutput<R> {
    pub fn values(&self) -> ModelOutput<f64> {
        ModelOutput {
            gpp: self.gpp.value(),
            et: self.et.value(),
            soil_water: self.soil_water.value(),
        }
    }
}

/// The four multiplicative GPP modifiers of one day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Modifiers<T = f64> {
    pub light: T,
    pub vpd: T,
    pub soil_water: T,
    pub acclimation: T,
}

impl<R: Real> Modifiers<R> {
    pub fn product(&self) -> R {
        self.light * self.vpd * self.soil_water * self.acclimation
    }
}

/// Light saturation `1 / (γφ + 1)`.
pub fn modifier_light<R: Real>(par: f64, gamma: R) -> R {
    (gamma * par + 1.0).rdiv(1.0)
}

/// VPD decline `exp(κD)`.
pub fn modifier_vpd<R: Real>(vpd: f64, kappa: R) -> R {
    (kappa * vpd).exp()
}

/// Ramp from the wilting point to [`GPP_WATER_THRESHOLD`] of capacity.
pub fn modifier_soil_water<R: Real>(state: &ModelState<R>, params: &PrelesParams<R>) -> R {
    let relative = state.soil_water / params.soil_capacity;
    let wilt = params.wilting_fraction;
    ((relative - wilt) / wilt.rsub(GPP_WATER_THRESHOLD)).clamp(0.0, 1.0)
}

/// Ramp from `x0` (0) to `smax` (1).
pub fn modifier_acclimation<R: Real>(acclim: R, x0: R, smax: R) -> R {
    ((acclim - x0) / (smax - x0)).clamp(0.0, 1.0)
}

/// Soil-water limitation of evaporation, ramp from wilting point to `et_shape`.
pub fn modifier_et_soil_water<R: Real>(state: &ModelState<R>, params: &PrelesParams<R>) -> R {
    let relative = state.soil_water / params.soil_capacity;
    ((relative - params.wilting_fraction) / (params.et_shape - params.wilting_fraction))
        .clamp(0.0, 1.0)
}

/// Exponential moving average of air temperature.
pub fn update_acclimation<R: Real>(acclim: R, t_air: f64, tau: R) -> R {
    acclim + (acclim.rsub(t_air)) / tau
}

pub fn modifiers<R: Real>(
    driver: &DriverRecord,
    state: &ModelState<R>,
    params: &PrelesParams<R>,
) -> Modifiers<R> {
    Modifiers {
        light: modifier_light(driver.par, params.gamma),
        vpd: modifier_vpd(driver.vpd, params.kappa),
        soil_water: modifier_soil_water(state, params),
        acclimation: modifier_acclimation(state.acclim, params.x0, params.smax),
    }
}

/// `β · φ · fAPAR · ∏ f_i` for given modifiers.
pub fn light_use<R: Real>(beta: R, par: f64, fapar: f64, modifiers: &Modifiers<R>) -> R {
    beta * (par * fapar) * modifiers.product()
}

/// Daily GPP from the state at the start of the day (acclimation already
/// advanced to today).
pub fn gpp_step<R: Real>(driver: &DriverRecord, state: &ModelState<R>, params: &PrelesParams<R>) -> R {
    light_use(
        params.beta,
        driver.par,
        driver.fapar,
        &modifiers(driver, state, params),
    )
}

/// Evapotranspiration demand: transpiration coupled to GPP and VPD plus
/// soil-limited evaporation.
pub fn et_step<R: Real>(
    gpp: R,
    driver: &DriverRecord,
    state: &ModelState<R>,
    params: &PrelesParams<R>,
) -> R {
    let transpiration = params.alpha * gpp * (driver.vpd.max(0.0) + VPD_OFFSET).sqrt();
    let ground_par = (1.0 - driver.fapar) * driver.par;
    let evaporation = params.chi * ground_par * modifier_et_soil_water(state, params);
    transpiration + evaporation
}

/// Fluxes of one water-balance step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaterBalance<T = f64> {
    pub state: ModelState<T>,
    /// ET actually withdrawn from the soil
    pub et: T,
    pub drainage: T,
    pub melt: T,
    pub infiltration: T,
}

/// Three-pool water balance.
///
/// Precipitation falls as snow below 0 °C, otherwise reaches the surface pool;
/// melt is `min(snow, snow_melt_coeff · max(T, 0))`. Surface water infiltrates
/// up to capacity, the remainder drains at `drainage_rate`, and ET is taken
/// from the soil pool without driving it negative. Storage changes by exactly
/// `precip − et − drainage`.
pub fn water_balance_step<R: Real>(
    driver: &DriverRecord,
    state: &ModelState<R>,
    et_demand: R,
    params: &PrelesParams<R>,
) -> WaterBalance<R> {
    let zero = state.snow.lift(0.0);
    let (rain, snowfall) = if driver.t_air < 0.0 {
        (0.0, driver.precip)
    } else {
        (driver.precip, 0.0)
    };
    let snow = state.snow + snowfall;
    let potential_melt = params.snow_melt_coeff * driver.t_air.max(0.0);
    let (melt, snow) = if snow.value() <= potential_melt.value() {
        (snow, zero)
    } else {
        (potential_melt, snow - potential_melt)
    };

    let surface = state.surface_water + melt + rain;
    let room = params.soil_capacity - state.soil_water;
    let (infiltration, soil, surface) = if surface.value() >= room.value() {
        (room, params.soil_capacity, surface - room)
    } else {
        (surface, state.soil_water + surface, zero)
    };
    let drainage = surface * params.drainage_rate;
    let surface = surface - drainage;

    let (et, soil) = if et_demand.value() >= soil.value() {
        (soil, zero)
    } else {
        (et_demand, soil - et_demand)
    };

    WaterBalance {
        state: ModelState {
            soil_water: soil,
            surface_water: surface,
            snow,
            acclim: state.acclim,
        },
        et,
        drainage,
        melt,
        infiltration,
    }
}

/// Result of advancing the model by one day.
#[derive(Debug, Clone, Copy)]
pub struct DayStep<T = f64> {
    pub output: ModelOutput<T>,
    pub next: ModelState<T>,
    pub drainage: T,
}

/// Advances acclimation, computes GPP and ET, then the water balance.
pub fn step_day<R: Real>(
    driver: &DriverRecord,
    state: &ModelState<R>,
    params: &PrelesParams<R>,
) -> DayStep<R> {
    let mut today = *state;
    today.acclim = update_acclimation(state.acclim, driver.t_air, params.tau);
    let gpp = gpp_step(driver, &today, params);
    let et_demand = et_step(gpp, driver, &today, params);
    let wb = water_balance_step(driver, &today, et_demand, params);
    DayStep {
        output: ModelOutput {
            gpp,
            et: wb.et,
            soil_water: wb.state.soil_water,
        },
        next: wb.state,
        drainage: wb.drainage,
    }
}

fn check_day<R: Real>(day: usize, step: &DayStep<R>) -> Result<(), ProcessError> {
    let checks = [
        ("gpp", step.output.gpp.value()),
        ("et", step.output.et.value()),
        ("soil_water", step.next.soil_water.value()),
        ("surface_water", step.next.surface_water.value()),
        ("snow", step.next.snow.value()),
        ("acclimation state", step.next.acclim.value()),
    ];
    match checks.iter().find(|(_, v)| !v.is_finite()) {
        Some((quantity, _)) => Err(ProcessError::NonFinite { day, quantity }),
        None => Ok(()),
    }
}

/// Runs the model over a driver sequence, threading state day to day.
pub fn simulate<R: Real>(
    params: &PrelesParams<R>,
    drivers: &[DriverRecord],
    initial: ModelState<R>,
) -> Result<Vec<ModelOutput<R>>, ProcessError> {
    Ok(simulate_trace(params, drivers, initial)?
        .into_iter()
        .map(|(_, out)| out)
        .collect())
}

/// Like [`simulate`] but also returns the state at the start of every day.
pub fn simulate_trace<R: Real>(
    params: &PrelesParams<R>,
    drivers: &[DriverRecord],
    initial: ModelState<R>,
) -> Result<Vec<(ModelState<R>, ModelOutput<R>)>, ProcessError> {
    if drivers.is_empty() {
        return Err(ProcessError::EmptyDrivers);
    }
    let mut state = initial;
    let mut trace = Vec::with_capacity(drivers.len());
    for (day, driver) in drivers.iter().enumerate() {
        let step = step_day(driver, &state, params);
        check_day(day, &step)?;
        trace.push((state, step.output));
        state = step.next;
    }
    Ok(trace)
}

/// Runs with per-day parameter vectors (one vector per driver day).
pub fn simulate_varying<R: Real>(
    params: &[PrelesParams<R>],
    drivers: &[DriverRecord],
    initial: ModelState<R>,
) -> Result<Vec<ModelOutput<R>>, ProcessError> {
    if drivers.is_empty() {
        return Err(ProcessError::EmptyDrivers);
    }
    assert_eq!(params.len(), drivers.len(), "one parameter vector per day");
    let mut state = initial;
    let mut out = Vec::with_capacity(drivers.len());
    for (day, (driver, p)) in drivers.iter().zip(params).enumerate() {
        let step = step_day(driver, &state, p);
        check_day(day, &step)?;
        out.push(step.output);
        state = step.next;
    }
    Ok(out)
}

/// Initial state after `spinup_years` repetitions of the first 365 driver
/// days (or the whole sequence when shorter).
pub fn spun_up_state<R: Real>(
    params: &PrelesParams<R>,
    drivers: &[DriverRecord],
    spinup_years: usize,
) -> Result<ModelState<R>, ProcessError> {
    let first = drivers.first().ok_or(ProcessError::EmptyDrivers)?;
    let mut state = ModelState::initial(params, first);
    let year = &drivers[..drivers.len().min(365)];
    for _ in 0..spinup_years {
        for (day, driver) in year.iter().enumerate() {
            let step = step_day(driver, &state, params);
            check_day(day, &step)?;
            state = step.next;
        }
    }
    Ok(state)
}

/// Convenience: default initial state and plain-value simulation.
pub fn run(params: &PrelesParams, drivers: &[DriverRecord]) -> Result<Vec<ModelOutput>, ProcessError> {
    params.validate()?;
    let first = drivers.first().ok_or(ProcessError::EmptyDrivers)?;
    simulate(params, drivers, ModelState::initial(params, first))
}

#[cfg(test)]
mod tests;

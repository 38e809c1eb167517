use serde::{Deserialize, Serialize};

use super::ProcessError;
use crate::autodiff::Real;

/// Number of named process-model parameters.
pub const N_PARAMS: usize = 13;

/// Canonical key order used for flat parameter vectors and serialized maps.
pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "beta",
    "x0",
    "gamma",
    "kappa",
    "alpha",
    "chi",
    "tau",
    "soil_capacity",
    "drainage_rate",
    "snow_melt_coeff",
    "wilting_fraction",
    "et_shape",
    "smax",
];

/// Process-model parameter vector.
///
/// Generic over the scalar so the same vector type carries plain values or
/// tape nodes produced by a parameter network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrelesParams<T = f64> {
    /// potential light-use efficiency, gC mol⁻¹
    pub beta: T,
    /// acclimation threshold, °C
    pub x0: T,
    /// light saturation coefficient, m² d mol⁻¹
    pub gamma: T,
    /// VPD sensitivity, kPa⁻¹ (non-positive)
    pub kappa: T,
    /// transpiration per unit GPP
    pub alpha: T,
    /// soil evaporation per unit of ground-reaching PAR
    pub chi: T,
    /// acclimation time constant, days
    pub tau: T,
    /// soil water holding capacity, mm
    pub soil_capacity: T,
    /// fraction of surface water drained per day
    pub drainage_rate: T,
    /// snow melt per degree-day, mm °C⁻¹ d⁻¹
    pub snow_melt_coeff: T,
    /// relative soil water at which uptake stops
    pub wilting_fraction: T,
    /// relative soil water above which ET is unrestricted
    pub et_shape: T,
    /// acclimation state at which the temperature modifier saturates, °C
    pub smax: T,
}

impl Default for PrelesParams<f64> {
    fn default() -> Self {
        Self {
            beta: 0.65,
            x0: -4.0,
            gamma: 0.03,
            kappa: -0.4,
            alpha: 0.2,
            chi: 0.1,
            tau: 13.0,
            soil_capacity: 160.0,
            drainage_rate: 0.5,
            snow_melt_coeff: 3.0,
            wilting_fraction: 0.1,
            et_shape: 0.4,
            smax: 18.0,
        }
    }
}

impl<T: Copy> PrelesParams<T> {
    pub fn to_array(&self) -> [T; N_PARAMS] {
        [
            self.beta,
            self.x0,
            self.gamma,
            self.kappa,
            self.alpha,
            self.chi,
            self.tau,
            self.soil_capacity,
            self.drainage_rate,
            self.snow_melt_coeff,
            self.wilting_fraction,
            self.et_shape,
            self.smax,
        ]
    }

    pub fn from_array(v: [T; N_PARAMS]) -> Self {
        Self {
            beta: v[0],
            x0: v[1],
            gamma: v[2],
            kappa: v[3],
            alpha: v[4],
            chi: v[5],
            tau: v[6],
            soil_capacity: v[7],
            drainage_rate: v[8],
            snow_melt_coeff: v[9],
            wilting_fraction: v[10],
            et_shape: v[11],
            smax: v[12],
        }
    }

    pub fn from_slice(v: &[T]) -> Option<Self> {
        let arr: [T; N_PARAMS] = v.try_into().ok()?;
        Some(Self::from_array(arr))
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> PrelesParams<U> {
        PrelesParams::from_array(self.to_array().map(f))
    }
}

impl<R: Real> PrelesParams<R> {
    /// Plain values of a (possibly differentiable) parameter vector.
    pub fn values(&self) -> PrelesParams<f64> {
        self.map(Real::value)
    }
}

/// Index of a parameter name in [`PARAM_NAMES`].
pub fn param_index(name: &str) -> Option<usize> {
    PARAM_NAMES.iter().position(|n| *n == name)
}

impl PrelesParams<f64> {
    pub fn validate(&self) -> Result<(), ProcessError> {
        let check = |ok: bool, name: &'static str, value: f64, reason: &'static str| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(ProcessError::InvalidParam {
                    name,
                    value,
                    reason,
                })
            }
        };
        for (name, v) in PARAM_NAMES.iter().zip(self.to_array()) {
            check(v.is_finite(), name, v, "must be finite")?;
        }
        check(self.beta > 0.0, "beta", self.beta, "must be > 0")?;
        check(self.gamma > 0.0, "gamma", self.gamma, "must be > 0")?;
        check(self.kappa <= 0.0, "kappa", self.kappa, "must be <= 0")?;
        check(self.alpha >= 0.0, "alpha", self.alpha, "must be >= 0")?;
        check(self.chi >= 0.0, "chi", self.chi, "must be >= 0")?;
        check(self.tau >= 1.0, "tau", self.tau, "must be >= 1")?;
        check(
            self.soil_capacity > 0.0,
            "soil_capacity",
            self.soil_capacity,
            "must be > 0",
        )?;
        check(
            (0.0..=1.0).contains(&self.drainage_rate),
            "drainage_rate",
            self.drainage_rate,
            "must lie in [0, 1]",
        )?;
        check(
            self.snow_melt_coeff >= 0.0,
            "snow_melt_coeff",
            self.snow_melt_coeff,
            "must be >= 0",
        )?;
        check(
            (0.0..1.0).contains(&self.wilting_fraction),
            "wilting_fraction",
            self.wilting_fraction,
            "must lie in [0, 1)",
        )?;
        check(
            self.et_shape > self.wilting_fraction,
            "et_shape",
            self.et_shape,
            "must exceed wilting_fraction",
        )?;
        check(
            super::GPP_WATER_THRESHOLD > self.wilting_fraction,
            "wilting_fraction",
            self.wilting_fraction,
            "must stay below the GPP soil-water threshold",
        )?;
        check(self.smax > self.x0, "smax", self.smax, "must exceed x0")?;
        Ok(())
    }
}

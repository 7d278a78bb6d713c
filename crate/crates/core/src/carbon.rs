//! Constant-power energy and CO2e estimation from measured wall-clock time.
//!
//! Power draw is modelled as a fixed CPU term (TDP times a load factor)
//! plus a fixed RAM term; energy is power times runtime, and emissions are
//! energy times carbon intensity times PUE. Changes in estimated emissions
//! therefore come entirely from changes in runtime.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constant-power model of the machine running the workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerModel {
    /// Thermal design power of the CPU, watts.
    pub cpu_tdp_w: f64,
    /// Fraction of TDP drawn on average, in (0, 1].
    #[serde(default = "default_load_factor")]
    pub cpu_load_factor: f64,
    /// Installed RAM, gigabytes.
    #[serde(default)]
    pub ram_gb: f64,
    /// RAM power per gigabyte, watts.
    #[serde(default = "default_ram_w_per_gb")]
    pub ram_w_per_gb: f64,
    /// Power usage effectiveness multiplier, >= 1.
    #[serde(default = "default_pue")]
    pub pue: f64,
    /// Grid carbon intensity, gCO2e per kWh. No universal default exists;
    /// sample configs ship an illustrative value.
    pub carbon_intensity_g_per_kwh: f64,
}

fn default_load_factor() -> f64 {
    0.5
}

fn default_ram_w_per_gb() -> f64 {
    0.375
}

fn default_pue() -> f64 {
    1.0
}

impl PowerModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.cpu_tdp_w.is_finite() && self.cpu_tdp_w > 0.0) {
            return Err(Error::invalid("cpu_tdp_w must be positive"));
        }
        if !(self.cpu_load_factor > 0.0 && self.cpu_load_factor <= 1.0) {
            return Err(Error::invalid("cpu_load_factor must lie in (0, 1]"));
        }
        if !(self.ram_gb.is_finite() && self.ram_gb >= 0.0) {
            return Err(Error::invalid("ram_gb must be non-negative"));
        }
        if !(self.ram_w_per_gb.is_finite() && self.ram_w_per_gb >= 0.0) {
            return Err(Error::invalid("ram_w_per_gb must be non-negative"));
        }
        if !(self.pue.is_finite() && self.pue >= 1.0) {
            return Err(Error::invalid("pue must be >= 1"));
        }
        if !(self.carbon_intensity_g_per_kwh.is_finite() && self.carbon_intensity_g_per_kwh >= 0.0)
        {
            return Err(Error::invalid("carbon_intensity_g_per_kwh must be non-negative"));
        }
        Ok(())
    }

    /// Modelled constant draw in watts.
    pub fn power_w(&self) -> f64 {
        self.cpu_tdp_w * self.cpu_load_factor + self.ram_gb * self.ram_w_per_gb
    }
}

/// Energy and emissions attributed to one measured runtime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionsEstimate {
    pub runtime_s: f64,
    pub power_w: f64,
    pub energy_kwh: f64,
    pub gco2e: f64,
    pub power_model: PowerModel,
}

/// Convert a runtime into an [`EmissionsEstimate`] under `model`.
pub fn estimate(runtime_s: f64, model: &PowerModel) -> Result<EmissionsEstimate> {
    model.validate()?;
    if !(runtime_s.is_finite() && runtime_s >= 0.0) {
        return Err(Error::invalid(format!(
            "runtime must be non-negative, got {runtime_s}"
        )));
    }
    let power_w = model.power_w();
    let energy_kwh = power_w * runtime_s / 3.6e6;
    let gco2e = energy_kwh * model.carbon_intensity_g_per_kwh * model.pue;
    Ok(EmissionsEstimate {
        runtime_s,
        power_w,
        energy_kwh,
        gco2e,
        power_model: model.clone(),
    })
}

/// Run `task` and return its result with the monotonic wall-clock duration
/// in seconds. Only meaningful when the task runs in isolation.
pub fn timed<T>(task: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = task();
    (out, start.elapsed().as_secs_f64())
}

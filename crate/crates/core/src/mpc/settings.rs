use serde::{Deserialize, Serialize};

use super::loss::MpcLossConfig;
use super::optimize::OptimizerConfig;
use crate::error::{Error, Result};
use crate::model::Forecast;
use crate::testbed::TestbedConfig;

/// Controller-side choices: tariff, weights, comfort floor, actuator range
/// and the closed-loop period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcSettings {
    pub w_obj: f64,
    pub w_input: f64,
    pub w_comfort: f64,
    /// Price outside and inside the peak window, cost per kWh.
    pub price_off_peak: f64,
    pub price_peak: f64,
    /// Lowest acceptable zone temperature, °C.
    pub comfort_low: f64,
    pub u_low: f64,
    pub u_high: f64,
    pub optimizer: OptimizerConfig,
    /// Days of on-off operation before the controller takes over.
    pub warmup_days: usize,
    /// Days under the controller.
    pub days: usize,
    /// Added to the experiment seed for the weather and occupancy of
    /// closed-loop runs, so they differ from the training data.
    pub seed_offset: u64,
}

impl MpcSettings {
    /// Defaults with the cooling bound set to what the plant delivers at
    /// the occupied setpoint.
    pub fn for_testbed(cfg: &TestbedConfig) -> Self {
        Self {
            w_obj: 1.0,
            w_input: 1e3,
            w_comfort: 1e3,
            price_off_peak: 1.0,
            price_peak: 5.0,
            comfort_low: 18.0,
            u_low: cfg.hvac.max_cooling(cfg.schedule.setpoint_occupied),
            u_high: 0.0,
            optimizer: OptimizerConfig::default(),
            warmup_days: 2,
            days: 14,
            seed_offset: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, w) in [
            ("mpc.w_obj", self.w_obj),
            ("mpc.w_input", self.w_input),
            ("mpc.w_comfort", self.w_comfort),
            ("mpc.price_off_peak", self.price_off_peak),
            ("mpc.price_peak", self.price_peak),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(key, "must be finite and >= 0"));
            }
        }
        if !(self.u_low <= self.u_high && self.u_high <= 0.0) {
            return Err(Error::config("mpc.u_low", "need u_low <= u_high <= 0"));
        }
        if self.days == 0 {
            return Err(Error::config("mpc.days", "must be >= 1"));
        }
        if self.warmup_days == 0 {
            return Err(Error::config("mpc.warmup_days", "must be >= 1"));
        }
        if !(self.optimizer.step > 0.0) {
            return Err(Error::config("mpc.step", "must be > 0"));
        }
        Ok(())
    }

    pub fn price_at(&self, cfg: &TestbedConfig, hour: f64) -> f64 {
        if cfg.schedule.in_peak(hour) {
            self.price_peak
        } else {
            self.price_off_peak
        }
    }

    /// Loss configuration over the forecast steps: the upper comfort bound
    /// follows the occupancy setpoint.
    pub fn loss_config(&self, cfg: &TestbedConfig, future: &[Forecast]) -> MpcLossConfig {
        MpcLossConfig {
            w_obj: self.w_obj,
            w_input: self.w_input,
            w_comfort: self.w_comfort,
            price: future.iter().map(|f| self.price_at(cfg, f.hour)).collect(),
            cop: vec![cfg.hvac.cop; future.len()],
            u_low: self.u_low,
            u_high: self.u_high,
            band_low: vec![self.comfort_low; future.len()],
            band_high: future.iter().map(|f| cfg.setpoint(f.occ)).collect(),
        }
    }
}

impl Default for MpcSettings {
    fn default() -> Self {
        Self::for_testbed(&TestbedConfig::default())
    }
}

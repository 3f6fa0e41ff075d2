//! Synthetic summer weather: a diurnal outdoor-temperature sinusoid with
//! per-day offsets and smoothed bounded noise, and a clipped half-sine of
//! solar irradiance with a per-day clearness factor.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rc::{STEPS_PER_DAY, STEP_HOURS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherConfig {
    pub mean_c: f64,
    pub amplitude_c: f64,
    /// Hour of the daily temperature maximum.
    pub peak_hour: f64,
    /// Bound on the step noise, °C.
    pub noise_c: f64,
    /// Bound on the per-day offset of the daily mean, °C.
    pub daily_spread_c: f64,
    /// Clear-sky solar peak, W/m².
    pub solar_peak: f64,
    pub sunrise: f64,
    pub sunset: f64,
}

impl Default for WeatherConfig {
    fn default() -> Self {
        Self {
            mean_c: 26.0,
            amplitude_c: 8.0,
            peak_hour: 15.0,
            noise_c: 1.0,
            daily_spread_c: 2.0,
            solar_peak: 800.0,
            sunrise: 6.0,
            sunset: 20.0,
        }
    }
}

impl WeatherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude_c >= 0.0 && self.noise_c >= 0.0 && self.daily_spread_c >= 0.0) {
            return Err(Error::config("weather.amplitude_c", "amplitudes must be >= 0"));
        }
        if !(self.solar_peak >= 0.0) {
            return Err(Error::config("weather.solar_peak", "must be >= 0"));
        }
        if !(0.0 <= self.sunrise && self.sunrise < self.sunset && self.sunset <= 24.0) {
            return Err(Error::config("weather.sunset", "need 0 <= sunrise < sunset <= 24"));
        }
        Ok(())
    }

    /// Clear-sky irradiance at `hour`, zero outside daylight.
    pub fn clear_sky(&self, hour: f64) -> f64 {
        if hour <= self.sunrise || hour >= self.sunset {
            return 0.0;
        }
        let phase = PI * (hour - self.sunrise) / (self.sunset - self.sunrise);
        (self.solar_peak * phase.sin()).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherTrace {
    pub t_out: Vec<f64>,
    pub solar: Vec<f64>,
}

pub fn synth_weather(days: usize, cfg: &WeatherConfig, rng: &mut ChaCha8Rng) -> WeatherTrace {
    let n = days * STEPS_PER_DAY;
    let mut t_out = Vec::with_capacity(n);
    let mut solar = Vec::with_capacity(n);
    let mut noise = 0.0;
    for _ in 0..days {
        let offset = if cfg.daily_spread_c > 0.0 {
            rng.gen_range(-cfg.daily_spread_c..=cfg.daily_spread_c)
        } else {
            0.0
        };
        let clearness = rng.gen_range(0.6..=1.0);
        for k in 0..STEPS_PER_DAY {
            let hour = k as f64 * STEP_HOURS;
            // AR(1) smoothing of uniform draws keeps |noise| <= noise_c
            let draw = if cfg.noise_c > 0.0 {
                rng.gen_range(-cfg.noise_c..=cfg.noise_c)
            } else {
                0.0
            };
            noise = 0.8 * noise + 0.2 * draw;
            let diurnal = cfg.amplitude_c * (2.0 * PI * (hour - cfg.peak_hour) / 24.0).cos();
            t_out.push(cfg.mean_c + offset + diurnal + noise);
            solar.push(clearness * cfg.clear_sky(hour));
        }
    }
    WeatherTrace { t_out, solar }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simulation step in seconds (15 minutes).
pub const STEP_SECONDS: f64 = 900.0;
/// Simulation step in hours.
pub const STEP_HOURS: f64 = STEP_SECONDS / 3600.0;
pub const STEPS_PER_DAY: usize = 96;

/// Single-zone lumped thermal parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RcParams {
    /// Zone capacitance, J/°C.
    pub c_zone: f64,
    /// Envelope resistance, °C/W.
    pub r_env: f64,
    /// Solar aperture, m².
    pub a_solar: f64,
    /// Sensible gain per occupant, W.
    pub q_person: f64,
    /// Plug and lighting gain, W.
    pub q_base: f64,
}

impl Default for RcParams {
    fn default() -> Self {
        Self {
            c_zone: 3.5e6,
            r_env: 1.0 / 60.0,
            a_solar: 0.5,
            q_person: 100.0,
            q_base: 100.0,
        }
    }
}

impl RcParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("rc.c_zone", self.c_zone),
            ("rc.r_env", self.r_env),
            ("rc.a_solar", self.a_solar),
            ("rc.q_person", self.q_person),
            ("rc.q_base", self.q_base),
        ];
        for (key, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, format!("must be finite and > 0, got {v}")));
            }
        }
        let ratio = STEP_SECONDS / (self.r_env * self.c_zone);
        if ratio >= 0.5 {
            return Err(Error::config(
                "rc.c_zone",
                format!("explicit Euler guard dt/(R·C) = {ratio:.4} must stay below 0.5"),
            ));
        }
        Ok(())
    }
}

/// Heat flows into the zone over one step, W.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fluxes {
    pub envelope: f64,
    pub solar: f64,
    pub internal: f64,
    pub hvac: f64,
}

impl Fluxes {
    pub fn total(&self) -> f64 {
        self.envelope + self.solar + self.internal + self.hvac
    }
}

pub fn fluxes(t_zone: f64, t_out: f64, solar: f64, occ: f64, u_hvac: f64, p: &RcParams) -> Fluxes {
    Fluxes {
        envelope: (t_out - t_zone) / p.r_env,
        solar: p.a_solar * solar,
        internal: p.q_person * occ + p.q_base,
        hvac: u_hvac,
    }
}

/// Explicit Euler update of the zone temperature over one 15-minute step.
pub fn rc_step(t_zone: f64, t_out: f64, solar: f64, occ: f64, u_hvac: f64, p: &RcParams) -> Result<f64> {
    let inputs = [t_zone, t_out, solar, occ, u_hvac];
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Simulation(format!("non-finite input to rc_step: {inputs:?}")));
    }
    let q = fluxes(t_zone, t_out, solar, occ, u_hvac, p).total();
    Ok(t_zone + STEP_SECONDS / p.c_zone * q)
}

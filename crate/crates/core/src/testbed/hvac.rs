use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constant-temperature, variable-flow supply air.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HvacParams {
    /// Supply air temperature, °C.
    pub t_supply: f64,
    /// Maximum supply flow, m³/s.
    pub flow_max: f64,
    /// Air density, kg/m³.
    pub rho_air: f64,
    /// Air heat capacity, J/(kg·°C).
    pub cp_air: f64,
    /// Thermal-to-electric conversion.
    pub cop: f64,
}

impl Default for HvacParams {
    fn default() -> Self {
        Self {
            t_supply: 13.0,
            flow_max: 0.16,
            rho_air: 1.2,
            cp_air: 1005.0,
            cop: 3.0,
        }
    }
}

impl HvacParams {
    pub fn validate(&self, setpoint_occupied: f64) -> Result<()> {
        for (key, v) in [
            ("hvac.flow_max", self.flow_max),
            ("hvac.rho_air", self.rho_air),
            ("hvac.cp_air", self.cp_air),
            ("hvac.cop", self.cop),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, format!("must be finite and > 0, got {v}")));
            }
        }
        if !(self.t_supply < setpoint_occupied) {
            return Err(Error::config(
                "hvac.t_supply",
                "supply temperature must be below the occupied setpoint",
            ));
        }
        Ok(())
    }

    /// W of thermal power per m³/s per °C of supply-zone difference.
    pub fn capacity_rate(&self) -> f64 {
        self.rho_air * self.cp_air
    }

    /// Most negative thermal power available with the zone at `t_zone`.
    pub fn max_cooling(&self, t_zone: f64) -> f64 {
        self.flow_max * self.capacity_rate() * (self.t_supply - t_zone).min(0.0)
    }

    /// Flow that delivers `u` W (≤ 0) with the zone at `t_zone`, clipped to
    /// the actuator range.
    pub fn flow_for(&self, u: f64, t_zone: f64) -> f64 {
        let dt = self.t_supply - t_zone;
        if dt >= 0.0 || u >= 0.0 {
            return 0.0;
        }
        (u / (self.capacity_rate() * dt)).clamp(0.0, self.flow_max)
    }

    pub fn electric_power(&self, u: f64) -> f64 {
        u.abs() / self.cop
    }
}

/// Signed thermal power delivered to the zone by `flow` m³/s of supply air.
pub fn hvac_from_flow(flow: f64, t_zone: f64, p: &HvacParams) -> Result<f64> {
    if !(flow >= 0.0 && flow <= p.flow_max) {
        return Err(Error::Actuation(format!(
            "flow {flow} m³/s outside [0, {}]",
            p.flow_max
        )));
    }
    // + 0.0 turns a zero-flow -0.0 into 0.0
    Ok(flow * p.capacity_rate() * (p.t_supply - t_zone) + 0.0)
}

/// On-off thermostat with hysteresis; returns the new on state.
///
/// Switches on above `setpoint + deadband/2`, off below
/// `setpoint - deadband/2`, and holds the previous state in between.
pub fn onoff_controller(t_zone: f64, setpoint: f64, deadband: f64, prev_on: bool) -> bool {
    let half = deadband / 2.0;
    if t_zone > setpoint + half {
        true
    } else if t_zone < setpoint - half {
        false
    } else {
        prev_on
    }
}

/// Flow command for an on-off decision.
pub fn onoff_flow(on: bool, p: &HvacParams) -> f64 {
    if on {
        p.flow_max
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_flow_zero_power() {
        let u = hvac_from_flow(0.0, 24.0, &HvacParams::default()).unwrap();
        assert_eq!(u, 0.0);
        assert!(u.is_sign_positive());
    }

    #[test]
    fn full_flow_at_24() {
        let u = hvac_from_flow(0.16, 24.0, &HvacParams::default()).unwrap();
        let expected = 0.16 * 1.2 * 1005.0 * (13.0 - 24.0);
        assert!((u - expected).abs() < 1e-9);
        assert!((u + 2122.56).abs() < 1e-6);
    }

    #[test]
    fn no_power_at_supply_temperature() {
        let p = HvacParams::default();
        for flow in [0.0, 0.05, 0.16] {
            assert_eq!(hvac_from_flow(flow, p.t_supply, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn flow_out_of_range_is_actuation_error() {
        let p = HvacParams::default();
        assert!(matches!(hvac_from_flow(0.2, 24.0, &p), Err(Error::Actuation(_))));
        assert!(matches!(hvac_from_flow(-0.01, 24.0, &p), Err(Error::Actuation(_))));
    }

    #[test]
    fn onoff_examples() {
        assert!(onoff_controller(24.5, 24.0, 0.5, false));
        for t in [23.75, 23.9, 24.0, 24.25] {
            assert!(!onoff_controller(t, 24.0, 0.5, false));
            assert!(onoff_controller(t, 24.0, 0.5, true));
        }
        assert!(!onoff_controller(23.0, 24.0, 0.5, true));
        assert!(!onoff_controller(23.0, 24.0, 0.5, false));
    }

    #[test]
    fn flow_for_inverts_hvac_from_flow() {
        let p = HvacParams::default();
        let u = hvac_from_flow(0.07, 26.0, &p).unwrap();
        assert!((p.flow_for(u, 26.0) - 0.07).abs() < 1e-15);
        assert_eq!(p.flow_for(-1e9, 26.0), p.flow_max);
        assert_eq!(p.flow_for(-100.0, 12.0), 0.0);
    }
}

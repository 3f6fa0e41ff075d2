use chrono::NaiveDateTime;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frame::{default_start, TimeSeriesFrame};
use super::hvac::{hvac_from_flow, onoff_controller, onoff_flow, HvacParams};
use super::rc::{rc_step, RcParams, STEPS_PER_DAY};
use super::schedule::{occupancy_schedule, DayPlan, SchedulePolicy};
use super::weather::{synth_weather, WeatherConfig};
use crate::error::{Error, Result};

const WEATHER_STREAM: u64 = 1;
const OCCUPANCY_STREAM: u64 = 2;

/// Seeded generator on a dedicated stream, so adding draws to one consumer
/// never shifts another.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestbedConfig {
    pub rc: RcParams,
    pub hvac: HvacParams,
    pub schedule: SchedulePolicy,
    pub weather: WeatherConfig,
    /// Zone temperature before the first step, °C.
    pub t_init: f64,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        Self {
            rc: RcParams::default(),
            hvac: HvacParams::default(),
            schedule: SchedulePolicy::default(),
            weather: WeatherConfig::default(),
            t_init: 24.0,
        }
    }
}

impl TestbedConfig {
    pub fn validate(&self) -> Result<()> {
        self.rc.validate()?;
        self.schedule.validate()?;
        self.hvac.validate(self.schedule.setpoint_occupied)?;
        self.weather.validate()?;
        if !self.t_init.is_finite() {
            return Err(Error::config("rc.t_init", "must be finite"));
        }
        Ok(())
    }

    pub fn setpoint(&self, occ: f64) -> f64 {
        self.schedule.setpoint(occ > 0.0)
    }
}

/// Exogenous inputs for a whole run, known in advance.
#[derive(Debug, Clone, PartialEq)]
pub struct Disturbances {
    pub start: NaiveDateTime,
    pub t_out: Vec<f64>,
    pub solar: Vec<f64>,
    pub occ: Vec<f64>,
    pub days: Vec<DayPlan>,
}

impl Disturbances {
    pub fn generate(cfg: &TestbedConfig, days: usize, seed: u64) -> Self {
        let weather = synth_weather(days, &cfg.weather, &mut stream_rng(seed, WEATHER_STREAM));
        let occupancy =
            occupancy_schedule(days, &cfg.schedule, &mut stream_rng(seed, OCCUPANCY_STREAM));
        Self {
            start: default_start(),
            t_out: weather.t_out,
            solar: weather.solar,
            occ: occupancy.occ,
            days: occupancy.days,
        }
    }

    pub fn len(&self) -> usize {
        self.occ.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occ.is_empty()
    }
}

/// Step-by-step zone simulation that logs every channel.
pub struct ZoneSimulator<'a> {
    cfg: &'a TestbedConfig,
    dist: &'a Disturbances,
    frame: TimeSeriesFrame,
    t_zone: f64,
}

impl<'a> ZoneSimulator<'a> {
    pub fn new(cfg: &'a TestbedConfig, dist: &'a Disturbances) -> Self {
        Self {
            cfg,
            dist,
            frame: TimeSeriesFrame::empty(dist.start),
            t_zone: cfg.t_init,
        }
    }

    /// Index of the next step to simulate.
    pub fn step(&self) -> usize {
        self.frame.len()
    }

    pub fn done(&self) -> bool {
        self.step() >= self.dist.len()
    }

    /// Latest zone temperature (end of the previous step).
    pub fn t_zone(&self) -> f64 {
        self.t_zone
    }

    pub fn frame(&self) -> &TimeSeriesFrame {
        &self.frame
    }

    /// Applies `flow` for the next step and advances the zone.
    pub fn advance(&mut self, flow: f64) -> Result<f64> {
        let t = self.step();
        if t >= self.dist.len() {
            return Err(Error::Simulation("disturbance trace exhausted".into()));
        }
        let u = hvac_from_flow(flow, self.t_zone, &self.cfg.hvac)?;
        let next = rc_step(
            self.t_zone,
            self.dist.t_out[t],
            self.dist.solar[t],
            self.dist.occ[t],
            u,
            &self.cfg.rc,
        )?;
        self.frame.push(
            self.dist.t_out[t],
            self.dist.solar[t],
            self.dist.occ[t],
            u,
            self.cfg.hvac.electric_power(u),
            next,
        );
        self.t_zone = next;
        Ok(next)
    }

    pub fn finish(self) -> TimeSeriesFrame {
        self.frame
    }
}

/// Deadband thermostat state carried between steps.
#[derive(Debug, Clone, Copy, Default)]
pub struct OnOffState {
    pub on: bool,
}

impl OnOffState {
    pub fn flow(&mut self, cfg: &TestbedConfig, t_zone: f64, occ: f64) -> f64 {
        self.on = onoff_controller(t_zone, cfg.setpoint(occ), cfg.schedule.deadband, self.on);
        onoff_flow(self.on, &cfg.hvac)
    }
}

/// Closed loop of the on-off thermostat over `dist`.
pub fn simulate_onoff(cfg: &TestbedConfig, dist: &Disturbances) -> Result<TimeSeriesFrame> {
    let mut sim = ZoneSimulator::new(cfg, dist);
    let mut ctl = OnOffState::default();
    while !sim.done() {
        let flow = ctl.flow(cfg, sim.t_zone(), dist.occ[sim.step()]);
        sim.advance(flow)?;
    }
    Ok(sim.finish())
}

/// On-off baseline run over `days` of synthetic weather and occupancy.
pub fn run_baseline(cfg: &TestbedConfig, days: usize, seed: u64) -> Result<TimeSeriesFrame> {
    cfg.validate()?;
    if days == 0 {
        return Err(Error::config("days", "must be >= 1"));
    }
    let dist = Disturbances::generate(cfg, days, seed);
    debug_assert_eq!(dist.len(), days * STEPS_PER_DAY);
    simulate_onoff(cfg, &dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbed::rc::{fluxes, STEP_SECONDS};

    #[test]
    fn deterministic_per_seed() {
        let cfg = TestbedConfig::default();
        let a = run_baseline(&cfg, 3, 17).unwrap();
        let b = run_baseline(&cfg, 3, 17).unwrap();
        assert_eq!(a.to_csv_string(&[]), b.to_csv_string(&[]));
        let c = run_baseline(&cfg, 3, 18).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn energy_balance_per_step() {
        let cfg = TestbedConfig::default();
        let f = run_baseline(&cfg, 4, 3).unwrap();
        let mut prev = cfg.t_init;
        for i in 0..f.len() {
            let q = fluxes(prev, f.t_out[i], f.solar[i], f.occ[i], f.u_hvac[i], &cfg.rc).total();
            let stored = (f.t_zone[i] - prev) * cfg.rc.c_zone / STEP_SECONDS;
            assert!((stored - q).abs() <= 1e-9 * q.abs().max(1.0), "step {i}: {stored} vs {q}");
            prev = f.t_zone[i];
        }
    }

    #[test]
    fn hvac_channel_within_flow_bounds() {
        let cfg = TestbedConfig::default();
        let f = run_baseline(&cfg, 4, 5).unwrap();
        let mut prev = cfg.t_init;
        for i in 0..f.len() {
            let bound = cfg.hvac.flow_max * cfg.hvac.capacity_rate() * (prev - cfg.hvac.t_supply);
            assert!(f.u_hvac[i] <= 0.0 && f.u_hvac[i].abs() <= bound + 1e-9);
            assert_eq!(f.p_elec[i], f.u_hvac[i].abs() / cfg.hvac.cop);
            prev = f.t_zone[i];
        }
    }

    #[test]
    fn no_gains_no_hvac_stays_constant() {
        let mut cfg = TestbedConfig::default();
        cfg.rc.q_base = 1e-300;
        cfg.rc.q_person = 1e-300;
        cfg.rc.a_solar = 1e-300;
        cfg.schedule.setpoint_occupied = 40.0;
        cfg.schedule.setpoint_unoccupied = 40.0;
        let mut dist = Disturbances::generate(&cfg, 2, 1);
        dist.t_out.iter_mut().for_each(|t| *t = cfg.t_init);
        let f = simulate_onoff(&cfg, &dist).unwrap();
        assert!(f.t_zone.iter().all(|&t| t == cfg.t_init));
        assert!(f.u_hvac.iter().all(|&u| u == 0.0));
    }

    #[test]
    fn thermostat_never_switches_inside_deadband() {
        let cfg = TestbedConfig::default();
        let f = run_baseline(&cfg, 10, 2).unwrap();
        let half = cfg.schedule.deadband / 2.0;
        let mut prev_t = cfg.t_init;
        let mut prev_on = false;
        for i in 0..f.len() {
            let on = f.u_hvac[i] < 0.0;
            let sp = cfg.setpoint(f.occ[i]);
            if (prev_t - sp).abs() <= half && prev_t > cfg.hvac.t_supply {
                assert_eq!(on, prev_on, "switched inside deadband at step {i}");
            }
            prev_on = on;
            prev_t = f.t_zone[i];
        }
    }

    #[test]
    fn occupied_steady_state_hugs_setpoint() {
        let cfg = TestbedConfig::default();
        let f = run_baseline(&cfg, 10, 4).unwrap();
        let db = cfg.schedule.deadband;
        let sp = cfg.schedule.setpoint_occupied;
        // largest one-step swing: full cooling or free heating over one step
        let overshoot = (0..f.len())
            .map(|i| {
                let prev = if i == 0 { cfg.t_init } else { f.t_zone[i - 1] };
                (f.t_zone[i] - prev).abs()
            })
            .fold(0.0, f64::max);
        // occupied steps at least 8 h after arrival are in steady operation
        let mut checked = 0;
        for i in 0..f.len() {
            let steady = (0..32).all(|k| i >= k && f.occ[i - k] > 0.0) && i >= 96;
            if steady && f.t_zone[i] > sp {
                assert!(f.t_zone[i] <= sp + db + overshoot, "step {i}: {}", f.t_zone[i]);
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn arrival_triggers_recovery_transient() {
        let cfg = TestbedConfig::default();
        let dist = Disturbances::generate(&cfg, 5, 11);
        let f = simulate_onoff(&cfg, &dist).unwrap();
        let mut long_recoveries = 0;
        for (d, plan) in dist.days.iter().enumerate() {
            let arrive = d * STEPS_PER_DAY + (plan.arrive / 0.25) as usize;
            let above = (arrive..(arrive + 40).min(f.len()))
                .take_while(|&i| f.t_zone[i] > cfg.schedule.setpoint_occupied + 0.25)
                .count();
            if above >= 4 {
                long_recoveries += 1;
            }
        }
        assert!(long_recoveries >= 3, "only {long_recoveries} recoveries");
    }
}

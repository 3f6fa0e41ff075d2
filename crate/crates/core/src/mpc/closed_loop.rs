//! Closed-loop runs of the testbed under a controller that picks each
//! step's supply-air flow.

use serde::{Deserialize, Serialize};

use super::optimize::{optimize_with_context, ControlPlan};
use super::policy::ControlLawNet;
use super::settings::MpcSettings;
use crate::error::{Error, Result};
use crate::model::{DynamicsModel, Forecast, Observation, PredictionWindow};
use crate::testbed::{Disturbances, OnOffState, TestbedConfig, TimeSeriesFrame, ZoneSimulator, STEPS_PER_DAY};

/// What a controller sees before deciding step `frame.len()`.
pub struct StepInput<'a> {
    pub cfg: &'a TestbedConfig,
    /// Perfect forecasts: the disturbances the run will actually see.
    pub dist: &'a Disturbances,
    /// Every row logged so far.
    pub frame: &'a TimeSeriesFrame,
    pub t_zone: f64,
}

impl StepInput<'_> {
    pub fn step(&self) -> usize {
        self.frame.len()
    }
}

pub trait Controller {
    fn label(&self) -> String;

    /// Thermostat state at the end of the on-off warm-up.
    fn warm_start(&mut self, _state: OnOffState) {}

    /// Supply-air flow for the next step, m³/s.
    fn flow(&mut self, input: &StepInput) -> Result<f64>;
}

/// The deadband thermostat.
#[derive(Debug, Clone, Default)]
pub struct OnOffController {
    state: OnOffState,
}

impl Controller for OnOffController {
    fn label(&self) -> String {
        "baseline".into()
    }

    fn warm_start(&mut self, state: OnOffState) {
        self.state = state;
    }

    fn flow(&mut self, input: &StepInput) -> Result<f64> {
        let occ = input.dist.occ[input.step()];
        Ok(self.state.flow(input.cfg, input.t_zone, occ))
    }
}

/// Prediction window for the decision at `input.step()`: the last logged row
/// is the current measurement and the forecast covers the next `horizon`
/// steps.
pub fn control_window(input: &StepInput, history: usize, horizon: usize) -> Result<PredictionWindow> {
    let t = input.step();
    if t < history + 1 {
        return Err(Error::Dataset(format!(
            "decision at step {t} needs {} logged rows",
            history + 1
        )));
    }
    if t + horizon > input.dist.len() {
        return Err(Error::Dataset(format!(
            "forecast to step {} beyond the {}-step disturbance trace",
            t + horizon,
            input.dist.len()
        )));
    }
    let frame = input.frame;
    let anchor = t - 1;
    let future: Vec<Forecast> = (t..t + horizon)
        .map(|i| Forecast {
            t_out: input.dist.t_out[i],
            solar: input.dist.solar[i],
            occ: input.dist.occ[i],
            hour: frame.hour_of_day(i),
        })
        .collect();
    Ok(PredictionWindow {
        anchor,
        history: (anchor - history..anchor)
            .map(|i| Observation::from_frame(frame, i))
            .collect(),
        current: Observation::from_frame(frame, anchor),
        future,
        future_u: vec![0.0; horizon],
        truth: None,
    })
}

/// Solver effort over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub solves: usize,
    pub mean_iterations: f64,
    pub converged_fraction: f64,
}

#[derive(Debug, Default, Clone, Copy)]
struct SolverTally {
    solves: usize,
    iterations: usize,
    converged: usize,
}

impl SolverTally {
    fn record(&mut self, plan: &ControlPlan) {
        self.solves += 1;
        self.iterations += plan.iterations;
        self.converged += plan.converged as usize;
    }

    fn stats(&self) -> SolverStats {
        let n = self.solves.max(1) as f64;
        SolverStats {
            solves: self.solves,
            mean_iterations: self.iterations as f64 / n,
            converged_fraction: self.converged as f64 / n,
        }
    }
}

fn flow_for_plan(input: &StepInput, u: f64) -> f64 {
    input.cfg.hvac.flow_for(u, input.t_zone)
}

/// Re-optimizes the plan through `model` at every step, warm-started from
/// the previous plan shifted by one step.
pub struct DirectMpc<'m, M: DynamicsModel + ?Sized> {
    model: &'m M,
    label: String,
    settings: MpcSettings,
    plan: Option<Vec<f64>>,
    tally: SolverTally,
}

impl<'m, M: DynamicsModel + ?Sized> DirectMpc<'m, M> {
    pub fn new(model: &'m M, label: impl Into<String>, settings: MpcSettings) -> Self {
        Self {
            model,
            label: label.into(),
            settings,
            plan: None,
            tally: SolverTally::default(),
        }
    }

    pub fn stats(&self) -> SolverStats {
        self.tally.stats()
    }

    fn warm_init(&self, m: usize) -> Vec<f64> {
        match &self.plan {
            Some(p) if p.len() == m && m > 0 => {
                let mut next = p[1..].to_vec();
                next.push(p[m - 1]);
                next
            }
            _ => vec![0.0; m],
        }
    }
}

impl<M: DynamicsModel + ?Sized> Controller for DirectMpc<'_, M> {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn flow(&mut self, input: &StepInput) -> Result<f64> {
        let m = self.model.horizon();
        let window = control_window(input, self.model.history_len(), m)?;
        let cfg = self.settings.loss_config(input.cfg, &window.future);
        let ctx = self.model.prepare(&window)?;
        let init = self.warm_init(m);
        let plan = optimize_with_context(self.model, &ctx, &cfg, &self.settings.optimizer, &init)?;
        self.tally.record(&plan);
        let u0 = plan.u.first().copied().unwrap_or(0.0);
        self.plan = Some(plan.u);
        Ok(flow_for_plan(input, u0))
    }
}

/// Applies the first step of the control law's plan.
pub struct PolicyController<'n> {
    net: &'n ControlLawNet,
    label: String,
    settings: MpcSettings,
}

impl<'n> PolicyController<'n> {
    pub fn new(net: &'n ControlLawNet, label: impl Into<String>, settings: MpcSettings) -> Self {
        Self {
            net,
            label: label.into(),
            settings,
        }
    }
}

impl Controller for PolicyController<'_> {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn flow(&mut self, input: &StepInput) -> Result<f64> {
        let m = self.net.horizon;
        let t = input.step();
        if t + m > input.dist.len() {
            return Err(Error::Dataset(format!("forecast to step {} beyond the trace", t + m)));
        }
        let future: Vec<Forecast> = (t..t + m)
            .map(|i| Forecast {
                t_out: input.dist.t_out[i],
                solar: input.dist.solar[i],
                occ: input.dist.occ[i],
                hour: input.frame.hour_of_day(i),
            })
            .collect();
        let cfg = self.settings.loss_config(input.cfg, &future);
        let plan = self.net.act(input.t_zone, &future, &cfg)?;
        Ok(flow_for_plan(input, plan.first().copied().unwrap_or(0.0)))
    }
}

/// Disturbances for warm-up, the controlled days and one forecast horizon
/// beyond them.
pub fn control_disturbances(cfg: &TestbedConfig, settings: &MpcSettings, horizon: usize, seed: u64) -> Disturbances {
    let tail = horizon.div_ceil(STEPS_PER_DAY);
    Disturbances::generate(cfg, settings.warmup_days + settings.days + tail, seed)
}

/// Runs the on-off thermostat for the warm-up days, then `controller` for
/// `settings.days`; returns the controlled rows only.
pub fn closed_loop(
    cfg: &TestbedConfig,
    dist: &Disturbances,
    settings: &MpcSettings,
    controller: &mut dyn Controller,
) -> Result<TimeSeriesFrame> {
    cfg.validate()?;
    settings.validate()?;
    let warm = settings.warmup_days * STEPS_PER_DAY;
    let end = warm + settings.days * STEPS_PER_DAY;
    if end > dist.len() {
        return Err(Error::Simulation(format!(
            "run needs {end} steps of disturbances, have {}",
            dist.len()
        )));
    }
    let mut sim = ZoneSimulator::new(cfg, dist);
    let mut thermostat = OnOffState::default();
    while sim.step() < warm {
        let flow = thermostat.flow(cfg, sim.t_zone(), dist.occ[sim.step()]);
        sim.advance(flow)?;
    }
    controller.warm_start(thermostat);
    while sim.step() < end {
        let input = StepInput {
            cfg,
            dist,
            frame: sim.frame(),
            t_zone: sim.t_zone(),
        };
        let flow = controller.flow(&input)?;
        sim.advance(flow.clamp(0.0, cfg.hvac.flow_max))?;
    }
    Ok(sim.finish().slice(warm..end))
}

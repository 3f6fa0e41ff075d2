//! Small hand-specified models: analytic surrogates, the RC simulator as a
//! model, a constant predictor and a sign-flipping wrapper.

use ndarray::Array2;

use super::window::PredictionWindow;
use super::{running_sum_matrix, DynamicsModel};
use crate::error::{Error, Result};
use crate::neural::{Tape, Var};
use crate::testbed::{RcParams, STEP_SECONDS};

fn check_row(tape: &Tape, u: Var, m: usize) -> Result<()> {
    if tape.shape(u) != (1, m) {
        return Err(Error::shape(format!(
            "HVAC row has shape {:?}, expected (1, {m})",
            tape.shape(u)
        )));
    }
    Ok(())
}

/// `y_t = y_{t-1} + drift + gain·u_t` from the current temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearResponse {
    pub history: usize,
    pub horizon: usize,
    /// °C per W per step.
    pub gain: f64,
    /// °C per step.
    pub drift: f64,
}

impl DynamicsModel for LinearResponse {
    type Context = f64;

    fn history_len(&self) -> usize {
        self.history
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn prepare(&self, window: &PredictionWindow) -> Result<f64> {
        window.check(self.history, self.horizon)?;
        Ok(window.current.t_zone)
    }

    fn rollout(&self, tape: &mut Tape, y0: &f64, u: Var) -> Result<Var> {
        check_row(tape, u, self.horizon)?;
        let m = self.horizon;
        let du = tape.scale(u, self.gain);
        // row times the upper-triangular ones matrix is a running sum
        let upper = tape.constant(running_sum_matrix(m).reversed_axes());
        let cum = tape.matmul(du, upper);
        let base = tape.constant(Array2::from_shape_fn((1, m), |(_, t)| {
            y0 + self.drift * (t + 1) as f64
        }));
        Ok(tape.add(cum, base))
    }
}

/// `y_t = y_0 + gain·u_t`: no dynamics, one independent response per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticGain {
    pub history: usize,
    pub horizon: usize,
    pub gain: f64,
}

impl DynamicsModel for StaticGain {
    type Context = f64;

    fn history_len(&self) -> usize {
        self.history
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn prepare(&self, window: &PredictionWindow) -> Result<f64> {
        window.check(self.history, self.horizon)?;
        Ok(window.current.t_zone)
    }

    fn rollout(&self, tape: &mut Tape, y0: &f64, u: Var) -> Result<Var> {
        check_row(tape, u, self.horizon)?;
        let du = tape.scale(u, self.gain);
        Ok(tape.offset(du, *y0))
    }
}

/// The RC zone equations with the window's forecast disturbances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcOracle {
    pub history: usize,
    pub horizon: usize,
    pub rc: RcParams,
}

#[derive(Debug, Clone)]
pub struct RcContext {
    y0: f64,
    /// Temperature change from everything but the zone and the HVAC, per step.
    drive: Vec<f64>,
}

impl DynamicsModel for RcOracle {
    type Context = RcContext;

    fn history_len(&self) -> usize {
        self.history
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn prepare(&self, window: &PredictionWindow) -> Result<RcContext> {
        window.check(self.history, self.horizon)?;
        let p = &self.rc;
        let k = STEP_SECONDS / p.c_zone;
        Ok(RcContext {
            y0: window.current.t_zone,
            drive: window
                .future
                .iter()
                .map(|f| k * (f.t_out / p.r_env + p.a_solar * f.solar + p.q_person * f.occ + p.q_base))
                .collect(),
        })
    }

    fn rollout(&self, tape: &mut Tape, ctx: &RcContext, u: Var) -> Result<Var> {
        check_row(tape, u, self.horizon)?;
        let p = &self.rc;
        let k = STEP_SECONDS / p.c_zone;
        let keep = 1.0 - k / p.r_env;
        let mut y = tape.scalar_constant(ctx.y0);
        let mut out = Vec::with_capacity(self.horizon);
        for (t, &d) in ctx.drive.iter().enumerate() {
            let ut = tape.slice_cols(u, t, t + 1);
            let hvac = tape.scale(ut, k);
            let decayed = tape.scale(y, keep);
            let driven = tape.offset(decayed, d);
            y = tape.add(driven, hvac);
            out.push(y);
        }
        if out.is_empty() {
            return Ok(tape.constant(Array2::zeros((1, 0))));
        }
        Ok(tape.concat(&out))
    }
}

/// Predicts the current temperature for every step, whatever the input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantOutput {
    pub history: usize,
    pub horizon: usize,
}

impl DynamicsModel for ConstantOutput {
    type Context = f64;

    fn history_len(&self) -> usize {
        self.history
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn prepare(&self, window: &PredictionWindow) -> Result<f64> {
        window.check(self.history, self.horizon)?;
        Ok(window.current.t_zone)
    }

    fn rollout(&self, tape: &mut Tape, y0: &f64, u: Var) -> Result<Var> {
        check_row(tape, u, self.horizon)?;
        let zero = tape.scale(u, 0.0);
        Ok(tape.offset(zero, *y0))
    }
}

/// Feeds `-u` to the wrapped model: more cooling predicts a warmer zone.
#[derive(Debug, Clone, PartialEq)]
pub struct Reflected<M>(pub M);

impl<M: DynamicsModel> DynamicsModel for Reflected<M> {
    type Context = M::Context;

    fn history_len(&self) -> usize {
        self.0.history_len()
    }

    fn horizon(&self) -> usize {
        self.0.horizon()
    }

    fn prepare(&self, window: &PredictionWindow) -> Result<M::Context> {
        self.0.prepare(window)
    }

    fn rollout(&self, tape: &mut Tape, ctx: &M::Context, u: Var) -> Result<Var> {
        let flipped = tape.scale(u, -1.0);
        self.0.rollout(tape, ctx, flipped)
    }
}

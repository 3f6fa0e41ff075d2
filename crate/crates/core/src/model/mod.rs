//! Zone-temperature sequence models and the operations every model shares:
//! forward prediction, HVAC override and the input Jacobian.

pub mod lstm;
pub mod modnn;
pub mod saved;
pub mod toy;
pub mod window;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{row, Tape, Var};

pub use lstm::{LstmConfig, LstmModel, LstmParams};
pub use modnn::{Modnn, ModnnConfig, ModnnParams};
pub use saved::{ModelVariant, TrainedContext, TrainedModel};
pub use toy::{ConstantOutput, LinearResponse, RcOracle, Reflected, StaticGain};
pub use window::{time_features, Affine, Forecast, NormStats, Observation, PredictionWindow};

/// A frozen model split into a part that does not depend on the HVAC
/// input (encoder, disturbance path) and a differentiable rollout over it.
pub trait DynamicsModel {
    type Context;

    fn history_len(&self) -> usize;
    fn horizon(&self) -> usize;

    /// Everything in the forward pass that is independent of `future_u`.
    fn prepare(&self, window: &PredictionWindow) -> Result<Self::Context>;

    /// Records the prediction on `tape`. `u` is a `1 × M` row of HVAC power
    /// in W; the result is a `1 × M` row of zone temperatures in °C whose
    /// entry `t` depends on entries `0..=t` of `u` only.
    fn rollout(&self, tape: &mut Tape, ctx: &Self::Context, u: Var) -> Result<Var>;
}

/// Allowed HVAC thermal power range, W.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorBounds {
    pub low: f64,
    pub high: f64,
}

impl ActuatorBounds {
    pub fn contains(&self, u: f64) -> bool {
        u >= self.low && u <= self.high
    }

    pub fn check(&self, u: &[f64]) -> Result<()> {
        match u.iter().position(|&v| !self.contains(v)) {
            None => Ok(()),
            Some(i) => Err(Error::Contract(format!(
                "HVAC input {} at step {i} outside [{}, {}]",
                u[i], self.low, self.high
            ))),
        }
    }
}

/// Prediction for a prepared context under the HVAC sequence `u`.
pub fn predict<M: DynamicsModel + ?Sized>(model: &M, ctx: &M::Context, u: &[f64]) -> Result<Vec<f64>> {
    if u.len() != model.horizon() {
        return Err(Error::shape(format!(
            "got {} HVAC inputs for a {}-step horizon",
            u.len(),
            model.horizon()
        )));
    }
    if u.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let uv = tape.constant(row(u));
    let y = model.rollout(&mut tape, ctx, uv)?;
    Ok(tape.value(y).iter().copied().collect())
}

/// Zone temperatures predicted with the window's own HVAC inputs, °C.
pub fn forward<M: DynamicsModel + ?Sized>(model: &M, window: &PredictionWindow) -> Result<Vec<f64>> {
    let ctx = model.prepare(window)?;
    predict(model, &ctx, &window.future_u)
}

/// Forward pass with the decoder's HVAC inputs replaced by `u_override`.
pub fn override_hvac<M: DynamicsModel + ?Sized>(
    model: &M,
    window: &PredictionWindow,
    u_override: &[f64],
    bounds: ActuatorBounds,
) -> Result<Vec<f64>> {
    bounds.check(u_override)?;
    let ctx = model.prepare(window)?;
    predict(model, &ctx, u_override)
}

/// `M × M` matrix of ∂y_t/∂u_s in °C/W at the window's HVAC inputs, one
/// reverse pass per output step.
pub fn hvac_jacobian<M: DynamicsModel + ?Sized>(model: &M, window: &PredictionWindow) -> Result<Array2<f64>> {
    let ctx = model.prepare(window)?;
    jacobian_at(model, &ctx, &window.future_u)
}

pub fn jacobian_at<M: DynamicsModel + ?Sized>(model: &M, ctx: &M::Context, u: &[f64]) -> Result<Array2<f64>> {
    let m = model.horizon();
    if u.len() != m {
        return Err(Error::shape(format!("got {} HVAC inputs for a {m}-step horizon", u.len())));
    }
    let mut jac = Array2::zeros((m, m));
    if m == 0 {
        return Ok(jac);
    }
    let mut tape = Tape::new();
    let uv = tape.leaf(row(u));
    let y = model.rollout(&mut tape, ctx, uv)?;
    for t in 0..m {
        let yt = tape.slice_cols(y, t, t + 1);
        let g = tape.backward(yt)?.wrt(uv);
        jac.row_mut(t).assign(&g.row(0));
    }
    Ok(jac)
}

/// Lower-triangular matrix of ones: `L x` is the running sum of `x`.
pub(crate) fn running_sum_matrix(m: usize) -> Array2<f64> {
    Array2::from_shape_fn((m, m), |(t, s)| if s <= t { 1.0 } else { 0.0 })
}

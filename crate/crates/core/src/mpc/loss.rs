//! The receding-horizon loss: squared price-weighted electric energy plus
//! squared hinge penalties on the input bounds and the comfort band.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{row, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcLossConfig {
    pub w_obj: f64,
    /// Weight of the input-bound penalty.
    pub w_input: f64,
    /// Weight of the comfort-band penalty.
    pub w_comfort: f64,
    /// Electricity price per step, cost per kWh.
    pub price: Vec<f64>,
    pub cop: Vec<f64>,
    /// HVAC thermal power bounds, W.
    pub u_low: f64,
    pub u_high: f64,
    /// Comfort band per step, °C.
    pub band_low: Vec<f64>,
    pub band_high: Vec<f64>,
}

/// Weighted loss terms, each averaged over scenarios and steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub objective: f64,
    pub input_penalty: f64,
    pub comfort_penalty: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.objective + self.input_penalty + self.comfort_penalty
    }
}

impl MpcLossConfig {
    pub fn horizon(&self) -> usize {
        self.price.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.horizon();
        if self.cop.len() != m || self.band_low.len() != m || self.band_high.len() != m {
            return Err(Error::shape(format!(
                "loss config lengths differ: price {m}, cop {}, band {}/{}",
                self.cop.len(),
                self.band_low.len(),
                self.band_high.len()
            )));
        }
        for (name, w) in [("w_obj", self.w_obj), ("w_input", self.w_input), ("w_comfort", self.w_comfort)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Contract(format!("{name} = {w} must be finite and >= 0")));
            }
        }
        if !(self.u_low <= self.u_high) {
            return Err(Error::Contract(format!(
                "input bounds [{}, {}] are empty",
                self.u_low, self.u_high
            )));
        }
        if let Some(t) = (0..m).find(|&t| !(self.band_low[t] <= self.band_high[t])) {
            return Err(Error::Contract(format!(
                "comfort band at step {t} is [{}, {}]",
                self.band_low[t], self.band_high[t]
            )));
        }
        if let Some(t) = (0..m).find(|&t| !(self.cop[t] > 0.0)) {
            return Err(Error::Contract(format!("COP at step {t} is {}", self.cop[t])));
        }
        Ok(())
    }

    /// Cost-weighted kW per W of thermal power, per step.
    fn energy_coeff(&self) -> Vec<f64> {
        self.price
            .iter()
            .zip(&self.cop)
            .map(|(p, c)| p / (1000.0 * c))
            .collect()
    }

    fn check_lengths(&self, u: usize, y: usize) -> Result<()> {
        let m = self.horizon();
        if u != m || y != m {
            return Err(Error::shape(format!(
                "loss over {m} steps got {u} inputs and {y} temperatures"
            )));
        }
        Ok(())
    }
}

/// Loss of one plan (`N = 1`).
pub fn mpc_loss(u: &[f64], y: &[f64], cfg: &MpcLossConfig) -> Result<LossBreakdown> {
    cfg.check_lengths(u.len(), y.len())?;
    let m = cfg.horizon();
    if m == 0 {
        return Ok(LossBreakdown::default());
    }
    let hinge = |x: f64| x.max(0.0).powi(2);
    let coeff = cfg.energy_coeff();
    let mut obj = 0.0;
    let mut input = 0.0;
    let mut comfort = 0.0;
    for t in 0..m {
        obj += (coeff[t] * u[t]).powi(2);
        input += hinge(cfg.u_low - u[t]) + hinge(u[t] - cfg.u_high);
        comfort += hinge(y[t] - cfg.band_high[t]) + hinge(cfg.band_low[t] - y[t]);
    }
    let n = m as f64;
    Ok(LossBreakdown {
        objective: cfg.w_obj * obj / n,
        input_penalty: cfg.w_input * input / n,
        comfort_penalty: cfg.w_comfort * comfort / n,
    })
}

/// Weighted loss terms of one `1 × M` plan on a tape, each divided by
/// `scale` (the scenario count times the horizon).
pub fn loss_graph(tape: &mut Tape, u: Var, y: Var, cfg: &MpcLossConfig, scale: f64) -> Result<[Var; 3]> {
    let m = cfg.horizon();
    let (us, ys) = (tape.shape(u), tape.shape(y));
    if us != (1, m) || ys != (1, m) {
        return Err(Error::shape(format!(
            "loss over {m} steps got plan {us:?} and prediction {ys:?}"
        )));
    }
    if m == 0 {
        let zero = tape.scalar_constant(0.0);
        return Ok([zero, zero, zero]);
    }
    let coeff = tape.constant(row(&cfg.energy_coeff()));
    let energy = tape.mul(u, coeff);
    let energy = tape.square(energy);
    let obj = tape.sum(energy);

    let neg = tape.scale(u, -1.0);
    let below = tape.offset(neg, cfg.u_low);
    let below = tape.relu(below);
    let below = tape.square(below);
    let above = tape.offset(u, -cfg.u_high);
    let above = tape.relu(above);
    let above = tape.square(above);
    let input = tape.add(below, above);
    let input = tape.sum(input);

    let high = tape.constant(row(&cfg.band_high));
    let low = tape.constant(row(&cfg.band_low));
    let hot = tape.sub(y, high);
    let hot = tape.relu(hot);
    let hot = tape.square(hot);
    let cold = tape.sub(low, y);
    let cold = tape.relu(cold);
    let cold = tape.square(cold);
    let comfort = tape.add(hot, cold);
    let comfort = tape.sum(comfort);

    Ok([
        tape.scale(obj, cfg.w_obj / scale),
        tape.scale(input, cfg.w_input / scale),
        tape.scale(comfort, cfg.w_comfort / scale),
    ])
}

/// Sum of the three terms from [`loss_graph`].
pub fn total_graph(tape: &mut Tape, terms: [Var; 3]) -> Var {
    let a = tape.add(terms[0], terms[1]);
    tape.add(a, terms[2])
}

pub(crate) fn breakdown_of(tape: &Tape, terms: [Var; 3]) -> LossBreakdown {
    LossBreakdown {
        objective: tape.scalar(terms[0]),
        input_penalty: tape.scalar(terms[1]),
        comfort_penalty: tape.scalar(terms[2]),
    }
}

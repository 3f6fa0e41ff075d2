//! Projected gradient descent on the HVAC plan through a frozen model.

use serde::{Deserialize, Serialize};

use super::loss::{breakdown_of, loss_graph, total_graph, LossBreakdown, MpcLossConfig};
use crate::error::{Error, Result};
use crate::model::{DynamicsModel, PredictionWindow};
use crate::neural::{row, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub iters: usize,
    /// Initial step size in units of the scaled plan `u / max(|u_low|, |u_high|)`.
    pub step: f64,
    /// Stop once no coordinate of the scaled plan moves more than this.
    pub tol: f64,
    /// Step halvings tried before an iterate counts as stalled.
    pub max_backtracks: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iters: 200,
            step: 1.0,
            tol: 1e-10,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPlan {
    /// HVAC thermal power per step, W.
    pub u: Vec<f64>,
    /// Predicted zone temperature per step, °C.
    pub y: Vec<f64>,
    pub breakdown: LossBreakdown,
    pub iterations: usize,
    pub converged: bool,
}

impl ControlPlan {
    pub fn loss(&self) -> f64 {
        self.breakdown.total()
    }
}

/// Loss, its gradient with respect to `u` and the prediction.
pub fn loss_and_gradient<M: DynamicsModel + ?Sized>(
    model: &M,
    ctx: &M::Context,
    u: &[f64],
    cfg: &MpcLossConfig,
) -> Result<(LossBreakdown, Vec<f64>, Vec<f64>)> {
    let m = cfg.horizon();
    let mut tape = Tape::new();
    let uv = tape.leaf(row(u));
    let y = model.rollout(&mut tape, ctx, uv)?;
    let terms = loss_graph(&mut tape, uv, y, cfg, m.max(1) as f64)?;
    let total = total_graph(&mut tape, terms);
    let grad = tape.backward(total)?.wrt(uv);
    Ok((
        breakdown_of(&tape, terms),
        grad.iter().copied().collect(),
        tape.value(y).iter().copied().collect(),
    ))
}

fn clamp_plan(v: &mut [f64], low: f64, high: f64) {
    v.iter_mut().for_each(|x| *x = x.clamp(low, high));
}

fn check_finite(b: &LossBreakdown, y: &[f64], grad: &[f64], iterate: usize) -> Result<()> {
    let bad = |v: &[f64]| v.iter().any(|x| !x.is_finite());
    let message = if !b.total().is_finite() {
        format!("loss is {}", b.total())
    } else if bad(y) {
        "prediction is not finite".to_string()
    } else if bad(grad) {
        "gradient is not finite".to_string()
    } else {
        return Ok(());
    };
    Err(Error::Optimizer { iterate, message })
}

/// Loss differences this small are rounding noise.
fn noise(a: f64, b: f64) -> f64 {
    8.0 * f64::EPSILON * a.abs().max(b.abs())
}

/// Minimizes the loss over `u` from `init`, projecting onto the input bounds
/// after every step. Step sizes come from backtracking on the projected
/// sufficient-decrease test and grow again after each accepted step.
pub fn optimize_with_context<M: DynamicsModel + ?Sized>(
    model: &M,
    ctx: &M::Context,
    cfg: &MpcLossConfig,
    opt: &OptimizerConfig,
    init: &[f64],
) -> Result<ControlPlan> {
    cfg.validate()?;
    let m = cfg.horizon();
    if m != model.horizon() || init.len() != m {
        return Err(Error::shape(format!(
            "plan of {} steps, loss over {m} steps, model horizon {}",
            init.len(),
            model.horizon()
        )));
    }
    if m == 0 {
        return Ok(ControlPlan {
            u: Vec::new(),
            y: Vec::new(),
            breakdown: LossBreakdown::default(),
            iterations: 0,
            converged: true,
        });
    }
    let scale = cfg.u_low.abs().max(cfg.u_high.abs()).max(1.0);
    let (lo, hi) = (cfg.u_low / scale, cfg.u_high / scale);

    let mut v: Vec<f64> = init.iter().map(|u| u / scale).collect();
    clamp_plan(&mut v, lo, hi);
    let to_u = |v: &[f64]| v.iter().map(|x| x * scale).collect::<Vec<f64>>();

    let (mut loss, grad_u, mut y) = loss_and_gradient(model, ctx, &to_u(&v), cfg)?;
    check_finite(&loss, &y, &grad_u, 0)?;
    let mut grad: Vec<f64> = grad_u.iter().map(|g| g * scale).collect();
    let mut best = (loss, v.clone(), y.clone());
    let mut step = opt.step;
    let mut iterations = 0;
    let mut converged = false;

    'outer: for k in 1..=opt.iters {
        let mut accepted = None;
        for _ in 0..=opt.max_backtracks {
            let mut cand: Vec<f64> = v.iter().zip(&grad).map(|(x, g)| x - step * g).collect();
            clamp_plan(&mut cand, lo, hi);
            let d: Vec<f64> = cand.iter().zip(&v).map(|(a, b)| a - b).collect();
            let moved = d.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
            if moved <= opt.tol {
                converged = true;
                break 'outer;
            }
            let (l_c, g_c, y_c) = loss_and_gradient(model, ctx, &to_u(&cand), cfg)?;
            check_finite(&l_c, &y_c, &g_c, k)?;
            let g_c: Vec<f64> = g_c.iter().map(|g| g * scale).collect();
            let ok = if (l_c.total() - loss.total()).abs() <= noise(l_c.total(), loss.total()) {
                // the loss cannot tell the points apart; the step is fine as
                // long as it stops short of the minimum along `d`
                g_c.iter().zip(&d).map(|(g, x)| g * x).sum::<f64>() <= 0.0
            } else {
                let lin: f64 = grad.iter().zip(&d).map(|(g, x)| g * x).sum();
                let quad: f64 = d.iter().map(|x| x * x).sum::<f64>() / (2.0 * step);
                l_c.total() <= loss.total() + lin + quad
            };
            if ok {
                accepted = Some((cand, moved, l_c, g_c, y_c));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, moved, l, g, yy)) = accepted else {
            // no decrease representable at this precision
            converged = true;
            break;
        };
        v = cand;
        loss = l;
        y = yy;
        grad = g;
        iterations = k;
        if loss.total() <= best.0.total() + noise(loss.total(), best.0.total()) {
            best = (loss, v.clone(), y.clone());
        }
        if moved <= opt.tol {
            converged = true;
            break;
        }
        step *= 2.0;
    }
    let (breakdown, v, y) = best;
    let mut u = to_u(&v);
    clamp_plan(&mut u, cfg.u_low, cfg.u_high);
    Ok(ControlPlan {
        u,
        y,
        breakdown,
        iterations,
        converged,
    })
}

/// [`optimize_with_context`] on a window's prepared context.
pub fn optimize_controls<M: DynamicsModel + ?Sized>(
    model: &M,
    window: &PredictionWindow,
    cfg: &MpcLossConfig,
    opt: &OptimizerConfig,
    init: &[f64],
) -> Result<ControlPlan> {
    let ctx = model.prepare(window)?;
    optimize_with_context(model, &ctx, cfg, opt, init)
}

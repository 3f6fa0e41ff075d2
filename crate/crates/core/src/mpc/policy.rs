//! A feed-forward control law trained by pushing the MPC loss through the
//! frozen dynamics model.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_graph, mpc_loss, total_graph, MpcLossConfig};
use crate::error::{Error, Result};
use crate::model::{predict, DynamicsModel, Forecast, NormStats, PredictionWindow};
use crate::neural::params::join;
use crate::neural::{row, AdamConfig, AdamState, Binder, BoundLinear, GradMap, Linear, Parameterized, Tape, Var};
use crate::testbed::stream_rng;

const SHUFFLE_STREAM: u64 = 31;

/// Maps the current temperature, the forecast, the comfort band and the
/// price over `M` steps to an `M`-step plan, squashed into the input bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLawNet {
    pub horizon: usize,
    pub u_low: f64,
    pub u_high: f64,
    pub norm: NormStats,
    pub hidden: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyHyper {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for PolicyHyper {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 20,
            lr: 1e-3,
            batch: 16,
            seed: 0,
        }
    }
}

/// One training or evaluation case for the control law.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyScenario {
    pub window: PredictionWindow,
    pub loss: MpcLossConfig,
}

struct BoundNet {
    hidden: BoundLinear,
    output: BoundLinear,
}

impl ControlLawNet {
    pub fn new(horizon: usize, hidden: usize, u_low: f64, u_high: f64, norm: NormStats, seed: u64) -> Self {
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        Self {
            horizon,
            u_low,
            u_high,
            norm,
            hidden: Linear::new(rng, Self::input_width(horizon), hidden),
            output: Linear::new(rng, hidden, horizon),
        }
    }

    pub fn input_width(horizon: usize) -> usize {
        1 + 6 * horizon
    }

    /// `[t_zone, t_out.., solar.., occ.., band_high.., band_low.., price..]`,
    /// temperatures and disturbances normalized like the dynamics model.
    pub fn features(&self, t_zone: f64, future: &[Forecast], cfg: &MpcLossConfig) -> Result<Vec<f64>> {
        let m = self.horizon;
        if future.len() != m || cfg.horizon() != m {
            return Err(Error::shape(format!(
                "control law over {m} steps got {} forecasts and a {}-step loss",
                future.len(),
                cfg.horizon()
            )));
        }
        let n = &self.norm;
        let mut x = Vec::with_capacity(Self::input_width(m));
        x.push(n.t_zone.norm(t_zone));
        x.extend(future.iter().map(|f| n.t_out.norm(f.t_out)));
        x.extend(future.iter().map(|f| n.solar.norm(f.solar)));
        x.extend(future.iter().map(|f| n.occ.norm(f.occ)));
        x.extend(cfg.band_high.iter().map(|&b| n.t_zone.norm(b)));
        x.extend(cfg.band_low.iter().map(|&b| n.t_zone.norm(b)));
        x.extend(cfg.price.iter().copied());
        Ok(x)
    }

    fn bind(&self, b: &mut Binder) -> BoundNet {
        BoundNet {
            hidden: self.hidden.bind(b, "hidden"),
            output: self.output.bind(b, "output"),
        }
    }

    fn plan_graph(&self, tape: &mut Tape, net: &BoundNet, x: &[f64]) -> Result<Var> {
        let xv = tape.constant(row(x));
        let h = net.hidden.forward(tape, xv)?;
        let h = tape.tanh(h);
        let o = net.output.forward(tape, h)?;
        let s = tape.sigmoid(o);
        let span = tape.scale(s, self.u_high - self.u_low);
        Ok(tape.offset(span, self.u_low))
    }

    /// Plan for one step's decision, W.
    pub fn act(&self, t_zone: f64, future: &[Forecast], cfg: &MpcLossConfig) -> Result<Vec<f64>> {
        let x = self.features(t_zone, future, cfg)?;
        let mut tape = Tape::new();
        let net = self.bind(&mut Binder::frozen(&mut tape));
        let u = self.plan_graph(&mut tape, &net, &x)?;
        Ok(tape.value(u).iter().map(|v| v.clamp(self.u_low, self.u_high)).collect())
    }
}

impl Parameterized for ControlLawNet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Array2<f64>)) {
        self.hidden.visit(&join(prefix, "hidden"), f);
        self.output.visit(&join(prefix, "output"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Array2<f64>)) {
        self.hidden.visit_mut(&join(prefix, "hidden"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// Mean loss of the control law over `scenarios`.
pub fn policy_loss<M: DynamicsModel + ?Sized>(
    model: &M,
    net: &ControlLawNet,
    scenarios: &[PolicyScenario],
) -> Result<f64> {
    plan_loss(model, scenarios, |s| net.act(s.window.current.t_zone, &s.window.future, &s.loss))
}

/// Mean loss when every scenario gets the plan `plan(scenario)`.
pub fn plan_loss<M: DynamicsModel + ?Sized>(
    model: &M,
    scenarios: &[PolicyScenario],
    mut plan: impl FnMut(&PolicyScenario) -> Result<Vec<f64>>,
) -> Result<f64> {
    if scenarios.is_empty() {
        return Err(Error::Dataset("no control scenarios".into()));
    }
    let mut total = 0.0;
    for s in scenarios {
        let u = plan(s)?;
        let ctx = model.prepare(&s.window)?;
        let y = predict(model, &ctx, &u)?;
        total += mpc_loss(&u, &y, &s.loss)?.total();
    }
    Ok(total / scenarios.len() as f64)
}

/// Trains a control law with Adam on mini-batches of scenarios; `N` in the
/// loss is the batch size. Returns the net and the mean training loss per
/// epoch.
pub fn train_control_law<M: DynamicsModel + ?Sized>(
    model: &M,
    scenarios: &[PolicyScenario],
    hyper: &PolicyHyper,
    u_low: f64,
    u_high: f64,
    norm: NormStats,
) -> Result<(ControlLawNet, Vec<f64>)> {
    if scenarios.is_empty() {
        return Err(Error::Dataset("no control scenarios".into()));
    }
    if hyper.batch == 0 {
        return Err(Error::config("policy.batch", "must be >= 1"));
    }
    let m = model.horizon();
    let mut net = ControlLawNet::new(m, hyper.hidden, u_low, u_high, norm, hyper.seed);
    let prepared: Vec<(M::Context, Vec<f64>)> = scenarios
        .iter()
        .map(|s| {
            s.loss.validate()?;
            let x = net.features(s.window.current.t_zone, &s.window.future, &s.loss)?;
            Ok((model.prepare(&s.window)?, x))
        })
        .collect::<Result<_>>()?;
    let mut adam = AdamState::new(AdamConfig {
        lr: hyper.lr,
        ..Default::default()
    });
    let mut rng = stream_rng(hyper.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..scenarios.len()).collect();
    let mut history = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(hyper.batch) {
            let mut tape = Tape::new();
            let mut binder = Binder::trainable(&mut tape);
            let bound = net.bind(&mut binder);
            let params = binder.into_bound();
            let scale = (chunk.len() * m.max(1)) as f64;
            let mut total: Option<Var> = None;
            for &i in chunk {
                let (ctx, x) = &prepared[i];
                let u = net.plan_graph(&mut tape, &bound, x)?;
                let y = model.rollout(&mut tape, ctx, u)?;
                let terms = loss_graph(&mut tape, u, y, &scenarios[i].loss, scale)?;
                let l = total_graph(&mut tape, terms);
                total = Some(match total {
                    Some(t) => tape.add(t, l),
                    None => l,
                });
            }
            let total = total.expect("chunks are non-empty");
            let value = tape.scalar(total);
            if !value.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("control-law loss is {value}"),
                });
            }
            sum += value * chunk.len() as f64;
            let grads = tape.backward(total)?;
            let map: GradMap = params.iter().map(|(name, v)| (name.clone(), grads.wrt(*v))).collect();
            adam.update(&mut net, &map).map_err(|e| Error::Training {
                epoch,
                message: e.to_string(),
            })?;
        }
        history.push(sum / scenarios.len() as f64);
    }
    Ok((net, history))
}

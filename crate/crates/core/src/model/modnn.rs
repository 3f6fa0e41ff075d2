//! Modular heat-balance network.
//!
//! Two sequence-to-sequence GRU modules turn disturbances into latent heat
//! fluxes (external: outdoor temperature, solar, time of day; internal:
//! occupancy, time of day). Each has an encoder over the history, a current
//! cell that absorbs the latest measurement, and a decoder over the
//! forecast. The HVAC module maps power to a latent flux and the
//! heat-balance module maps the summed fluxes to a temperature increment:
//!
//! ```text
//! y_t = y_{t-1} + HB(Q_ext,t + Q_int,t + HVAC(u_t))
//! ```
//!
//! `HVAC` and `HB` are positive linear layers, so every ∂y_t/∂u_s with
//! `s <= t` is a sum of products of softplus weights and is strictly
//! positive. The decoders never see `u` or `y`.

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::window::{stack_rows, time_features, NormStats, PredictionWindow};
use super::{running_sum_matrix, DynamicsModel};
use crate::error::{Error, Result};
use crate::neural::{
    Binder, BoundGru, BoundLinear, BoundPositiveLinear, Gru, Linear, Parameterized, PositiveLinear,
    Tape, Var,
};
use crate::neural::params::join;

const EXT_HISTORY: usize = 5;
const EXT_FORECAST: usize = 4;
const INT_HISTORY: usize = 4;
const INT_FORECAST: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModnnConfig {
    /// Encoder length L.
    pub history: usize,
    /// Decoder length M.
    pub horizon: usize,
    /// GRU hidden size per module.
    pub hidden: usize,
    /// Width of the latent heat fluxes.
    pub flux: usize,
}

impl Default for ModnnConfig {
    fn default() -> Self {
        Self {
            history: 96,
            horizon: 96,
            hidden: 16,
            flux: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModnnParams {
    pub ext_encoder: Gru,
    pub ext_current: Gru,
    pub ext_decoder: Gru,
    pub ext_readout: Linear,
    pub int_encoder: Gru,
    pub int_current: Gru,
    pub int_decoder: Gru,
    pub int_readout: Linear,
    pub hvac: PositiveLinear,
    pub heat_balance: PositiveLinear,
}

impl ModnnParams {
    pub fn new(cfg: &ModnnConfig, seed: u64) -> Self {
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let h = cfg.hidden;
        Self {
            ext_encoder: Gru::new(rng, EXT_HISTORY, h),
            ext_current: Gru::new(rng, EXT_HISTORY, h),
            ext_decoder: Gru::new(rng, EXT_FORECAST, h),
            ext_readout: Linear::new(rng, h, cfg.flux),
            int_encoder: Gru::new(rng, INT_HISTORY, h),
            int_current: Gru::new(rng, INT_HISTORY, h),
            int_decoder: Gru::new(rng, INT_FORECAST, h),
            int_readout: Linear::new(rng, h, cfg.flux),
            hvac: PositiveLinear::new(1, cfg.flux),
            heat_balance: PositiveLinear::new(cfg.flux, 1),
        }
    }

    fn bind(&self, b: &mut Binder) -> Bound {
        Bound {
            ext_encoder: self.ext_encoder.bind(b, "ext.encoder"),
            ext_current: self.ext_current.bind(b, "ext.current"),
            ext_decoder: self.ext_decoder.bind(b, "ext.decoder"),
            ext_readout: self.ext_readout.bind(b, "ext.readout"),
            int_encoder: self.int_encoder.bind(b, "int.encoder"),
            int_current: self.int_current.bind(b, "int.current"),
            int_decoder: self.int_decoder.bind(b, "int.decoder"),
            int_readout: self.int_readout.bind(b, "int.readout"),
            hvac: self.hvac.bind(b, "hvac"),
            heat_balance: self.heat_balance.bind(b, "heat_balance"),
        }
    }
}

impl Parameterized for ModnnParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Array2<f64>)) {
        self.ext_encoder.visit(&join(prefix, "ext.encoder"), f);
        self.ext_current.visit(&join(prefix, "ext.current"), f);
        self.ext_decoder.visit(&join(prefix, "ext.decoder"), f);
        self.ext_readout.visit(&join(prefix, "ext.readout"), f);
        self.int_encoder.visit(&join(prefix, "int.encoder"), f);
        self.int_current.visit(&join(prefix, "int.current"), f);
        self.int_decoder.visit(&join(prefix, "int.decoder"), f);
        self.int_readout.visit(&join(prefix, "int.readout"), f);
        self.hvac.visit(&join(prefix, "hvac"), f);
        self.heat_balance.visit(&join(prefix, "heat_balance"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Array2<f64>)) {
        self.ext_encoder.visit_mut(&join(prefix, "ext.encoder"), f);
        self.ext_current.visit_mut(&join(prefix, "ext.current"), f);
        self.ext_decoder.visit_mut(&join(prefix, "ext.decoder"), f);
        self.ext_readout.visit_mut(&join(prefix, "ext.readout"), f);
        self.int_encoder.visit_mut(&join(prefix, "int.encoder"), f);
        self.int_current.visit_mut(&join(prefix, "int.current"), f);
        self.int_decoder.visit_mut(&join(prefix, "int.decoder"), f);
        self.int_readout.visit_mut(&join(prefix, "int.readout"), f);
        self.hvac.visit_mut(&join(prefix, "hvac"), f);
        self.heat_balance.visit_mut(&join(prefix, "heat_balance"), f);
    }
}

struct Bound {
    ext_encoder: BoundGru,
    ext_current: BoundGru,
    ext_decoder: BoundGru,
    ext_readout: BoundLinear,
    int_encoder: BoundGru,
    int_current: BoundGru,
    int_decoder: BoundGru,
    int_readout: BoundLinear,
    hvac: BoundPositiveLinear,
    heat_balance: BoundPositiveLinear,
}

/// Normalized network inputs for a batch of windows, one `B × width`
/// matrix per time step.
struct Inputs {
    ext_history: Vec<Array2<f64>>,
    int_history: Vec<Array2<f64>>,
    ext_current: Array2<f64>,
    int_current: Array2<f64>,
    ext_forecast: Vec<Array2<f64>>,
    int_forecast: Vec<Array2<f64>>,
    y0: Array2<f64>,
    u: Vec<Array2<f64>>,
    truth: Option<Vec<Array2<f64>>>,
}

impl Inputs {
    fn build(windows: &[&PredictionWindow], n: &NormStats, history: usize, horizon: usize) -> Self {
        let ext_obs = |o: &super::Observation| {
            let [s, c] = time_features(o.hour);
            vec![n.t_out.norm(o.t_out), n.solar.norm(o.solar), s, c, n.t_zone.norm(o.t_zone)]
        };
        let int_obs = |o: &super::Observation| {
            let [s, c] = time_features(o.hour);
            vec![n.occ.norm(o.occ), s, c, n.t_zone.norm(o.t_zone)]
        };
        let ext_fc = |f: &super::Forecast| {
            let [s, c] = time_features(f.hour);
            vec![n.t_out.norm(f.t_out), n.solar.norm(f.solar), s, c]
        };
        let int_fc = |f: &super::Forecast| {
            let [s, c] = time_features(f.hour);
            vec![n.occ.norm(f.occ), s, c]
        };
        let all_truth = windows.iter().all(|w| w.truth.is_some());
        Self {
            ext_history: (0..history)
                .map(|t| stack_rows(windows, EXT_HISTORY, |w| ext_obs(&w.history[t])))
                .collect(),
            int_history: (0..history)
                .map(|t| stack_rows(windows, INT_HISTORY, |w| int_obs(&w.history[t])))
                .collect(),
            ext_current: stack_rows(windows, EXT_HISTORY, |w| ext_obs(&w.current)),
            int_current: stack_rows(windows, INT_HISTORY, |w| int_obs(&w.current)),
            ext_forecast: (0..horizon)
                .map(|t| stack_rows(windows, EXT_FORECAST, |w| ext_fc(&w.future[t])))
                .collect(),
            int_forecast: (0..horizon)
                .map(|t| stack_rows(windows, INT_FORECAST, |w| int_fc(&w.future[t])))
                .collect(),
            y0: stack_rows(windows, 1, |w| vec![n.t_zone.norm(w.current.t_zone)]),
            u: (0..horizon)
                .map(|t| stack_rows(windows, 1, |w| vec![n.u(w.future_u[t])]))
                .collect(),
            truth: all_truth.then(|| {
                (0..horizon)
                    .map(|t| {
                        stack_rows(windows, 1, |w| {
                            vec![n.t_zone.norm(w.truth.as_ref().expect("checked")[t])]
                        })
                    })
                    .collect()
            }),
        }
    }
}

/// Runs one module's encoder, current cell and decoder; returns the latent
/// flux per decoder step.
#[allow(clippy::too_many_arguments)]
fn module_fluxes(
    tape: &mut Tape,
    encoder: &BoundGru,
    current: &BoundGru,
    decoder: &BoundGru,
    readout: &BoundLinear,
    history: &[Array2<f64>],
    now: &Array2<f64>,
    forecast: &[Array2<f64>],
) -> Result<Vec<Var>> {
    let batch = now.nrows();
    let mut h = tape.constant(Array2::zeros((batch, encoder.hidden_size())));
    for x in history {
        let xv = tape.constant(x.clone());
        h = encoder.step(tape, xv, h)?;
    }
    let xv = tape.constant(now.clone());
    h = current.step(tape, xv, h)?;
    let mut out = Vec::with_capacity(forecast.len());
    for x in forecast {
        let xv = tape.constant(x.clone());
        h = decoder.step(tape, xv, h)?;
        out.push(readout.forward(tape, h)?);
    }
    Ok(out)
}

/// Disturbance flux `Q_ext + Q_int` per decoder step, each `B × flux`.
fn disturbance_fluxes(tape: &mut Tape, m: &Bound, inp: &Inputs) -> Result<Vec<Var>> {
    let ext = module_fluxes(
        tape,
        &m.ext_encoder,
        &m.ext_current,
        &m.ext_decoder,
        &m.ext_readout,
        &inp.ext_history,
        &inp.ext_current,
        &inp.ext_forecast,
    )?;
    let int = module_fluxes(
        tape,
        &m.int_encoder,
        &m.int_current,
        &m.int_decoder,
        &m.int_readout,
        &inp.int_history,
        &inp.int_current,
        &inp.int_forecast,
    )?;
    Ok(ext.into_iter().zip(int).map(|(e, i)| tape.add(e, i)).collect())
}

/// The heat-balance recursion on normalized temperatures, step by step.
fn heat_balance_rollout(
    tape: &mut Tape,
    hvac: &mut BoundPositiveLinear,
    heat_balance: &mut BoundPositiveLinear,
    y0: Var,
    q_dist: &[Var],
    u: &[Var],
) -> Result<Vec<Var>> {
    let mut y = y0;
    let mut out = Vec::with_capacity(q_dist.len());
    for (&q, &ut) in q_dist.iter().zip(u) {
        let q_hvac = hvac.forward(tape, ut)?;
        let q_all = tape.add(q, q_hvac);
        let dy = heat_balance.forward(tape, q_all)?;
        y = tape.add(y, dy);
        out.push(y);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Modnn {
    pub config: ModnnConfig,
    pub params: ModnnParams,
    pub norm: NormStats,
}

/// Encoder output for one window: disturbance fluxes (`M × flux`) and the
/// normalized current temperature.
#[derive(Debug, Clone)]
pub struct ModnnContext {
    q_dist: Array2<f64>,
    y0: f64,
    running_sum: Array2<f64>,
}

impl Modnn {
    pub fn new(config: ModnnConfig, norm: NormStats, seed: u64) -> Self {
        Self {
            params: ModnnParams::new(&config, seed),
            config,
            norm,
        }
    }

    /// ∂y_t/∂u_s in °C/W for any `s <= t`: the same for every window.
    pub fn hvac_gain(&self) -> f64 {
        let w_hvac = self.params.hvac.effective_weight();
        let w_hb = self.params.heat_balance.effective_weight();
        let chain: f64 = (0..self.config.flux).map(|k| w_hvac[[0, k]] * w_hb[[k, 0]]).sum();
        chain * self.norm.t_zone.std / self.norm.u_scale
    }

    /// Mean squared error over a batch, in normalized units, recorded on
    /// `tape`. With `trainable` the parameters are leaves whose names and
    /// nodes are returned for gradient extraction.
    pub fn loss_graph(
        &self,
        tape: &mut Tape,
        windows: &[&PredictionWindow],
        trainable: bool,
    ) -> Result<(Var, Vec<(String, Var)>)> {
        for w in windows {
            w.check(self.config.history, self.config.horizon)?;
        }
        let inp = Inputs::build(windows, &self.norm, self.config.history, self.config.horizon);
        let truth = inp
            .truth
            .as_ref()
            .ok_or_else(|| Error::Dataset("training windows need ground truth".into()))?;
        let mut binder = if trainable {
            Binder::trainable(tape)
        } else {
            Binder::frozen(tape)
        };
        let mut m = self.params.bind(&mut binder);
        let bound = binder.into_bound();
        let (preds, _) = self.graph(tape, &mut m, &inp)?;
        let loss = mse(tape, &preds, truth, windows.len());
        Ok((loss, bound))
    }

    /// Normalized predictions per decoder step, each `B × 1`.
    fn graph(&self, tape: &mut Tape, m: &mut Bound, inp: &Inputs) -> Result<(Vec<Var>, Vec<Var>)> {
        let q_dist = disturbance_fluxes(tape, m, inp)?;
        let y0 = tape.constant(inp.y0.clone());
        let u: Vec<Var> = inp.u.iter().map(|x| tape.constant(x.clone())).collect();
        let y = heat_balance_rollout(tape, &mut m.hvac, &mut m.heat_balance, y0, &q_dist, &u)?;
        Ok((y, u))
    }

    /// Predictions through the step-by-step training graph, °C. Agrees with
    /// [`super::forward`] up to rounding.
    pub fn forward_stepwise(&self, window: &PredictionWindow) -> Result<Vec<f64>> {
        window.check(self.config.history, self.config.horizon)?;
        let inp = Inputs::build(&[window], &self.norm, self.config.history, self.config.horizon);
        let mut tape = Tape::new();
        let mut m = self.params.bind(&mut Binder::frozen(&mut tape));
        let (y, _) = self.graph(&mut tape, &mut m, &inp)?;
        Ok(y.iter()
            .map(|&v| self.norm.t_zone.denorm(tape.scalar(v)))
            .collect())
    }
}

/// `Σ (pred − truth)² / (B·M)` over per-step `B × 1` predictions.
pub(crate) fn mse(tape: &mut Tape, preds: &[Var], truth: &[Array2<f64>], batch: usize) -> Var {
    let mut total: Option<Var> = None;
    for (&p, t) in preds.iter().zip(truth) {
        let tv = tape.constant(t.clone());
        let e = tape.sub(p, tv);
        let sq = tape.square(e);
        let s = tape.sum(sq);
        total = Some(match total {
            Some(acc) => tape.add(acc, s),
            None => s,
        });
    }
    let n = (preds.len() * batch).max(1) as f64;
    match total {
        Some(t) => tape.scale(t, 1.0 / n),
        None => tape.scalar_constant(0.0),
    }
}

impl Parameterized for Modnn {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Array2<f64>)) {
        self.params.visit(prefix, f)
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Array2<f64>)) {
        self.params.visit_mut(prefix, f)
    }
}

impl DynamicsModel for Modnn {
    type Context = ModnnContext;

    fn history_len(&self) -> usize {
        self.config.history
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn prepare(&self, window: &PredictionWindow) -> Result<ModnnContext> {
        window.check(self.config.history, self.config.horizon)?;
        let inp = Inputs::build(&[window], &self.norm, self.config.history, self.config.horizon);
        let mut tape = Tape::new();
        let m = self.params.bind(&mut Binder::frozen(&mut tape));
        let q = disturbance_fluxes(&mut tape, &m, &inp)?;
        let mut q_dist = Array2::zeros((q.len(), self.config.flux));
        for (t, v) in q.iter().enumerate() {
            q_dist.slice_mut(s![t..t + 1, ..]).assign(tape.value(*v));
        }
        Ok(ModnnContext {
            q_dist,
            y0: inp.y0[[0, 0]],
            running_sum: running_sum_matrix(self.config.horizon),
        })
    }

    fn rollout(&self, tape: &mut Tape, ctx: &ModnnContext, u: Var) -> Result<Var> {
        let m = self.config.horizon;
        if tape.shape(u) != (1, m) {
            return Err(Error::shape(format!(
                "HVAC row has shape {:?}, expected (1, {m})",
                tape.shape(u)
            )));
        }
        let (mut hvac, mut heat_balance) = {
            let mut b = Binder::frozen(tape);
            (
                self.params.hvac.bind(&mut b, "hvac"),
                self.params.heat_balance.bind(&mut b, "heat_balance"),
            )
        };
        // all M steps at once: the increments are independent given u, and
        // the recursion is their running sum
        let u_col = tape.transpose(u);
        let u_n = tape.scale(u_col, 1.0 / self.norm.u_scale);
        let q_hvac = hvac.forward(tape, u_n)?;
        let q_dist = tape.constant(ctx.q_dist.clone());
        let q_all = tape.add(q_dist, q_hvac);
        let dy = heat_balance.forward(tape, q_all)?;
        let sum = tape.constant(ctx.running_sum.clone());
        let cum = tape.matmul(sum, dy);
        let y_n = tape.offset(cum, ctx.y0);
        let y_scaled = tape.scale(y_n, self.norm.t_zone.std);
        let y = tape.offset(y_scaled, self.norm.t_zone.mean);
        Ok(tape.transpose(y))
    }
}

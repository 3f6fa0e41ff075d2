//! Unconstrained encoder-decoder LSTM over all channels.
//!
//! The encoder and current cell read every measured channel; the decoder
//! reads the forecast disturbances and the HVAC input, and a linear readout
//! gives the temperature increment per step. Nothing constrains the sign of
//! the response to `u`.

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::modnn::mse;
use super::window::{stack_rows, time_features, NormStats, Observation, PredictionWindow};
use super::DynamicsModel;
use crate::error::{Error, Result};
use crate::neural::params::join;
use crate::neural::{Binder, BoundLinear, BoundLstm, Linear, Lstm, Parameterized, Tape, Var};

const OBSERVED: usize = 7;
const DISTURBANCES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub history: usize,
    pub horizon: usize,
    pub hidden: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            history: 96,
            horizon: 96,
            hidden: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub encoder: Lstm,
    pub current: Lstm,
    pub decoder: Lstm,
    pub readout: Linear,
}

impl LstmParams {
    pub fn new(cfg: &LstmConfig, seed: u64) -> Self {
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        Self {
            encoder: Lstm::new(rng, OBSERVED, cfg.hidden),
            current: Lstm::new(rng, OBSERVED, cfg.hidden),
            decoder: Lstm::new(rng, DISTURBANCES + 1, cfg.hidden),
            readout: Linear::new(rng, cfg.hidden, 1),
        }
    }
}

impl Parameterized for LstmParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Array2<f64>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.current.visit(&join(prefix, "current"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
        self.readout.visit(&join(prefix, "readout"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Array2<f64>)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.current.visit_mut(&join(prefix, "current"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
        self.readout.visit_mut(&join(prefix, "readout"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub config: LstmConfig,
    pub params: LstmParams,
    pub norm: NormStats,
}

/// Encoder state and normalized decoder disturbances for one window.
#[derive(Debug, Clone)]
pub struct LstmContext {
    h: Array2<f64>,
    c: Array2<f64>,
    y0: f64,
    disturbances: Array2<f64>,
}

fn observed(n: &NormStats, o: &Observation) -> Vec<f64> {
    let [s, c] = time_features(o.hour);
    vec![
        n.t_out.norm(o.t_out),
        n.solar.norm(o.solar),
        n.occ.norm(o.occ),
        n.u(o.u_hvac),
        s,
        c,
        n.t_zone.norm(o.t_zone),
    ]
}

fn disturbances(n: &NormStats, f: &super::Forecast) -> Vec<f64> {
    let [s, c] = time_features(f.hour);
    vec![n.t_out.norm(f.t_out), n.solar.norm(f.solar), n.occ.norm(f.occ), s, c]
}

/// Decoder loop; `dist` and `u` hold one `B × 5` and `B × 1` node per step.
#[allow(clippy::too_many_arguments)]
fn decode(
    tape: &mut Tape,
    decoder: &BoundLstm,
    readout: &BoundLinear,
    mut h: Var,
    mut c: Var,
    y0: Var,
    dist: &[Var],
    u: &[Var],
) -> Result<Vec<Var>> {
    let mut y = y0;
    let mut out = Vec::with_capacity(dist.len());
    for (&d, &ut) in dist.iter().zip(u) {
        let x = tape.concat(&[d, ut]);
        (h, c) = decoder.step(tape, x, h, c)?;
        let dy = readout.forward(tape, h)?;
        y = tape.add(y, dy);
        out.push(y);
    }
    Ok(out)
}

impl LstmModel {
    pub fn new(config: LstmConfig, norm: NormStats, seed: u64) -> Self {
        Self {
            params: LstmParams::new(&config, seed),
            config,
            norm,
        }
    }

    /// Encoder and current cell over a batch; returns `(h, c, y0)`.
    fn encode(
        &self,
        tape: &mut Tape,
        encoder: &BoundLstm,
        current: &BoundLstm,
        windows: &[&PredictionWindow],
    ) -> Result<(Var, Var, Var)> {
        let n = &self.norm;
        let batch = windows.len();
        let zeros = Array2::zeros((batch, self.config.hidden));
        let mut h = tape.constant(zeros.clone());
        let mut c = tape.constant(zeros);
        for t in 0..self.config.history {
            let x = tape.constant(stack_rows(windows, OBSERVED, |w| observed(n, &w.history[t])));
            (h, c) = encoder.step(tape, x, h, c)?;
        }
        let x = tape.constant(stack_rows(windows, OBSERVED, |w| observed(n, &w.current)));
        (h, c) = current.step(tape, x, h, c)?;
        let y0 = tape.constant(stack_rows(windows, 1, |w| vec![n.t_zone.norm(w.current.t_zone)]));
        Ok((h, c, y0))
    }

    /// Mean squared error over a batch in normalized units; see
    /// [`super::Modnn::loss_graph`].
    pub fn loss_graph(
        &self,
        tape: &mut Tape,
        windows: &[&PredictionWindow],
        trainable: bool,
    ) -> Result<(Var, Vec<(String, Var)>)> {
        for w in windows {
            w.check(self.config.history, self.config.horizon)?;
            if w.truth.is_none() {
                return Err(Error::Dataset("training windows need ground truth".into()));
            }
        }
        let n = &self.norm;
        let mut binder = if trainable {
            Binder::trainable(tape)
        } else {
            Binder::frozen(tape)
        };
        let encoder = self.params.encoder.bind(&mut binder, "encoder");
        let current = self.params.current.bind(&mut binder, "current");
        let decoder = self.params.decoder.bind(&mut binder, "decoder");
        let readout = self.params.readout.bind(&mut binder, "readout");
        let bound = binder.into_bound();

        let (h, c, y0) = self.encode(tape, &encoder, &current, windows)?;
        let m = self.config.horizon;
        let dist: Vec<Var> = (0..m)
            .map(|t| tape.constant(stack_rows(windows, DISTURBANCES, |w| disturbances(n, &w.future[t]))))
            .collect();
        let u: Vec<Var> = (0..m)
            .map(|t| tape.constant(stack_rows(windows, 1, |w| vec![n.u(w.future_u[t])])))
            .collect();
        let preds = decode(tape, &decoder, &readout, h, c, y0, &dist, &u)?;
        let truth: Vec<Array2<f64>> = (0..m)
            .map(|t| {
                stack_rows(windows, 1, |w| {
                    vec![n.t_zone.norm(w.truth.as_ref().expect("checked")[t])]
                })
            })
            .collect();
        let loss = mse(tape, &preds, &truth, windows.len());
        Ok((loss, bound))
    }
}

impl Parameterized for LstmModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Array2<f64>)) {
        self.params.visit(prefix, f)
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Array2<f64>)) {
        self.params.visit_mut(prefix, f)
    }
}

impl DynamicsModel for LstmModel {
    type Context = LstmContext;

    fn history_len(&self) -> usize {
        self.config.history
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn prepare(&self, window: &PredictionWindow) -> Result<LstmContext> {
        window.check(self.config.history, self.config.horizon)?;
        let mut tape = Tape::new();
        let (encoder, current) = {
            let mut b = Binder::frozen(&mut tape);
            (
                self.params.encoder.bind(&mut b, "encoder"),
                self.params.current.bind(&mut b, "current"),
            )
        };
        let (h, c, y0) = self.encode(&mut tape, &encoder, &current, &[window])?;
        Ok(LstmContext {
            h: tape.value(h).clone(),
            c: tape.value(c).clone(),
            y0: tape.scalar(y0),
            disturbances: Array2::from_shape_fn((window.horizon(), DISTURBANCES), |(t, k)| {
                disturbances(&self.norm, &window.future[t])[k]
            }),
        })
    }

    fn rollout(&self, tape: &mut Tape, ctx: &LstmContext, u: Var) -> Result<Var> {
        let m = self.config.horizon;
        if tape.shape(u) != (1, m) {
            return Err(Error::shape(format!(
                "HVAC row has shape {:?}, expected (1, {m})",
                tape.shape(u)
            )));
        }
        let (decoder, readout) = {
            let mut b = Binder::frozen(tape);
            (
                self.params.decoder.bind(&mut b, "decoder"),
                self.params.readout.bind(&mut b, "readout"),
            )
        };
        let h = tape.constant(ctx.h.clone());
        let c = tape.constant(ctx.c.clone());
        let y0 = tape.scalar_constant(ctx.y0);
        let u_n = tape.scale(u, 1.0 / self.norm.u_scale);
        let dist: Vec<Var> = (0..m)
            .map(|t| tape.constant(ctx.disturbances.slice(s![t..t + 1, ..]).to_owned()))
            .collect();
        let u_steps: Vec<Var> = (0..m).map(|t| tape.slice_cols(u_n, t, t + 1)).collect();
        let y = decode(tape, &decoder, &readout, h, c, y0, &dist, &u_steps)?;
        let row = tape.concat(&y);
        let scaled = tape.scale(row, self.norm.t_zone.std);
        Ok(tape.offset(scaled, self.norm.t_zone.mean))
    }
}

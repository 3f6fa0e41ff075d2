#![allow(dead_code)]

use modnn::model::{Modnn, ModnnConfig, NormStats, PredictionWindow};
use modnn::neural::{Binder, Gru, Linear, Lstm, Parameterized, PositiveLinear, Tape, Var};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use modnn::testbed::{run_baseline, TestbedConfig, TimeSeriesFrame};
use modnn::Result;

pub const FD_EPS: f64 = 1e-4;
pub const FD_REL: f64 = 1e-4;

pub fn baseline_frame(days: usize, seed: u64) -> TimeSeriesFrame {
    run_baseline(&TestbedConfig::default(), days, seed).expect("baseline runs")
}

pub fn small_modnn(frame: &TimeSeriesFrame, history: usize, horizon: usize, seed: u64) -> Modnn {
    let config = ModnnConfig {
        history,
        horizon,
        hidden: 3,
        flux: 2,
    };
    Modnn::new(config, NormStats::fit(frame, 0..frame.len()), seed)
}

pub fn window_at(frame: &TimeSeriesFrame, anchor: usize, history: usize, horizon: usize) -> PredictionWindow {
    PredictionWindow::from_frame(frame, anchor, history, horizon).expect("anchor inside frame")
}

/// Relative error with a small floor so that entries that are both ~0 compare
/// by absolute difference.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Copy of `p` with one parameter entry shifted by `delta`.
pub fn nudged<P: Parameterized + Clone>(p: &P, name: &str, index: usize, delta: f64) -> P {
    let mut q = p.clone();
    q.visit_mut("", &mut |n, value| {
        if n == name {
            let slot = value.iter_mut().nth(index).expect("index in range");
            *slot += delta;
        }
    });
    q
}

/// Largest relative error between reverse-mode gradients and central
/// differences over every parameter entry. `build(p, tape, trainable)`
/// records a scalar loss and returns the bound parameter nodes.
pub fn max_gradient_error<P, F>(p: &P, build: F) -> f64
where
    P: Parameterized + Clone,
    F: Fn(&P, &mut Tape, bool) -> Result<(Var, Vec<(String, Var)>)>,
{
    let mut tape = Tape::new();
    let (loss, bound) = build(p, &mut tape, true).expect("graph builds");
    let grads = tape.backward(loss).expect("scalar loss");
    let eval = |q: &P| {
        let mut t = Tape::new();
        let (l, _) = build(q, &mut t, false).expect("graph builds");
        t.scalar(l)
    };
    let mut worst: f64 = 0.0;
    for (name, node) in bound {
        let analytic = grads.wrt(node);
        for (i, &g) in analytic.iter().enumerate() {
            let up = eval(&nudged(p, &name, i, FD_EPS));
            let down = eval(&nudged(p, &name, i, -FD_EPS));
            let numeric = (up - down) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(g, numeric));
        }
    }
    worst
}

pub fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

/// A layer together with its inputs, so one finite-difference sweep covers
/// parameter and input gradients.
#[derive(Clone)]
pub struct Probe<L> {
    pub layer: L,
    pub x: Array2<f64>,
    pub h: Array2<f64>,
    pub c: Array2<f64>,
    /// Fixed output weights; the loss is `Σ out ⊙ weights`.
    pub weights: Vec<Array2<f64>>,
}

impl<L: Parameterized> Parameterized for Probe<L> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Array2<f64>)) {
        self.layer.visit(&format!("{prefix}layer"), f);
        f(format!("{prefix}x"), &self.x);
        f(format!("{prefix}h"), &self.h);
        f(format!("{prefix}c"), &self.c);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Array2<f64>)) {
        self.layer.visit_mut(&format!("{prefix}layer"), f);
        f(format!("{prefix}x"), &mut self.x);
        f(format!("{prefix}h"), &mut self.h);
        f(format!("{prefix}c"), &mut self.c);
    }
}

pub fn probe<L>(rng: &mut ChaCha8Rng, layer: L, batch: usize, input: usize, hidden: usize, outputs: &[usize]) -> Probe<L> {
    Probe {
        layer,
        x: random(rng, batch, input, 1.5),
        h: random(rng, batch, hidden, 0.9),
        c: random(rng, batch, hidden, 0.9),
        weights: outputs.iter().map(|&w| random(rng, batch, w, 1.0)).collect(),
    }
}

pub fn weighted_sum(tape: &mut Tape, outs: &[Var], weights: &[Array2<f64>]) -> Var {
    let mut total = None;
    for (&o, w) in outs.iter().zip(weights) {
        let wv = tape.constant(w.clone());
        let prod = tape.mul(o, wv);
        let s = tape.sum(prod);
        total = Some(match total {
            Some(acc) => tape.add(acc, s),
            None => s,
        });
    }
    total.expect("at least one output")
}

pub fn binder(tape: &mut Tape, trainable: bool) -> Binder<'_> {
    if trainable {
        Binder::trainable(tape)
    } else {
        Binder::frozen(tape)
    }
}

pub fn sizes(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=4))
}

pub fn linear_error(seed: u64) -> f64 {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let (b, i, o) = sizes(rng);
    let mut layer = Linear::new(rng, i, o);
    layer.bias = random(rng, 1, o, 0.5);
    let p = probe(rng, layer, b, i, 1, &[o]);
    max_gradient_error(&p, |p: &Probe<Linear>, tape: &mut Tape, tr| -> Result<_> {
        let mut bd = binder(tape, tr);
        let l = p.layer.bind(&mut bd, "layer");
        let x = bd.bind("x".into(), &p.x);
        let bound = bd.into_bound();
        let y = l.forward(tape, x)?;
        Ok((weighted_sum(tape, &[y], &p.weights), bound))
    })
}

pub fn positive_linear_error(seed: u64) -> f64 {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let (b, i, o) = sizes(rng);
    let mut layer = PositiveLinear::new(i, o);
    layer.raw_weight = random(rng, i, o, 3.0);
    layer.bias = random(rng, 1, o, 0.5);
    let p = probe(rng, layer, b, i, 1, &[o]);
    max_gradient_error(&p, |p: &Probe<PositiveLinear>, tape: &mut Tape, tr| -> Result<_> {
        let mut bd = binder(tape, tr);
        let mut l = p.layer.bind(&mut bd, "layer");
        let x = bd.bind("x".into(), &p.x);
        let bound = bd.into_bound();
        // two applications share one softplus node
        let y1 = l.forward(tape, x)?;
        let y2 = l.forward(tape, x)?;
        let y = tape.mul(y1, y2);
        Ok((weighted_sum(tape, &[y], &p.weights), bound))
    })
}

/// Two chained GRU steps; `size` fixes batch, input and hidden widths.
pub fn gru_error(seed: u64, size: Option<(usize, usize, usize)>) -> f64 {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let (b, i, h) = size.unwrap_or_else(|| sizes(rng));
    let layer = Gru::new(rng, i, h);
    let p = probe(rng, layer, b, i, h, &[h]);
    max_gradient_error(&p, |p: &Probe<Gru>, tape: &mut Tape, tr| -> Result<_> {
        let mut bd = binder(tape, tr);
        let l = p.layer.bind(&mut bd, "layer");
        let x = bd.bind("x".into(), &p.x);
        let h0 = bd.bind("h".into(), &p.h);
        let bound = bd.into_bound();
        let h1 = l.step(tape, x, h0)?;
        let h2 = l.step(tape, x, h1)?;
        Ok((weighted_sum(tape, &[h2], &p.weights), bound))
    })
}

pub fn lstm_error(seed: u64) -> f64 {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let (b, i, h) = sizes(rng);
    let layer = Lstm::new(rng, i, h);
    let p = probe(rng, layer, b, i, h, &[h, h]);
    max_gradient_error(&p, |p: &Probe<Lstm>, tape: &mut Tape, tr| -> Result<_> {
        let mut bd = binder(tape, tr);
        let l = p.layer.bind(&mut bd, "layer");
        let x = bd.bind("x".into(), &p.x);
        let h0 = bd.bind("h".into(), &p.h);
        let c0 = bd.bind("c".into(), &p.c);
        let bound = bd.into_bound();
        let (h1, c1) = l.step(tape, x, h0, c0)?;
        let (h2, c2) = l.step(tape, x, h1, c1)?;
        Ok((weighted_sum(tape, &[h2, c2], &p.weights), bound))
    })
}

/// Full ModNN training loss on two random windows of `frame`.
pub fn modnn_error(frame: &TimeSeriesFrame, seed: u64) -> f64 {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let mut model = small_modnn(frame, 3, 3, seed);
    // move the positive chain and biases off their initial values
    model.params.hvac.raw_weight = random(rng, 1, 2, 2.0);
    model.params.heat_balance.raw_weight = random(rng, 2, 1, 2.0);
    model.params.heat_balance.bias = random(rng, 1, 1, 0.1);
    let windows: Vec<PredictionWindow> = (0..2)
        .map(|_| window_at(frame, rng.gen_range(3..frame.len() - 4), 3, 3))
        .collect();
    let refs: Vec<&PredictionWindow> = windows.iter().collect();
    max_gradient_error(&model, |m: &Modnn, tape: &mut Tape, tr| m.loss_graph(tape, &refs, tr))
}

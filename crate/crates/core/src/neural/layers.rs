//! Dense layers, a strictly-positive linear layer and recurrent cells.

use ndarray::Array2;
use rand::Rng;

use super::params::{join, Binder, Parameterized};
use super::tape::{softplus, softplus_inv, Tape, Var};
use crate::error::{Error, Result};

/// Effective weight of a freshly initialised positive layer.
pub const POSITIVE_INIT_WEIGHT: f64 = 0.1;

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-limit..limit))
}

fn check_width(tape: &Tape, x: Var, expected: usize, what: &str) -> Result<()> {
    let (_, cols) = tape.shape(x);
    if cols != expected {
        return Err(Error::shape(format!(
            "{what}: expected input width {expected}, got {cols}"
        )));
    }
    Ok(())
}

/// Unconstrained affine map `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl Linear {
    pub fn new<R: Rng>(rng: &mut R, input: usize, output: usize) -> Self {
        Self {
            weight: glorot(rng, input, output),
            bias: Array2::zeros((1, output)),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array2::zeros((1, output)),
        }
    }

    pub fn input_size(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_size(&self) -> usize {
        self.weight.ncols()
    }

    pub fn bind(&self, b: &mut Binder, prefix: &str) -> BoundLinear {
        BoundLinear {
            weight: b.bind(join(prefix, "weight"), &self.weight),
            bias: b.bind(join(prefix, "bias"), &self.bias),
            input: self.input_size(),
        }
    }
}

impl Parameterized for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Array2<f64>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Array2<f64>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    weight: Var,
    bias: Var,
    input: usize,
}

impl BoundLinear {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        check_width(tape, x, self.input, "linear")?;
        let xw = tape.matmul(x, self.weight);
        Ok(tape.add_row(xw, self.bias))
    }
}

/// Affine map whose weights are `softplus(raw_weight)`, so every entry of
/// the input-output Jacobian is strictly positive. No activation follows.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveLinear {
    pub raw_weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl PositiveLinear {
    /// Initialised so that every effective weight is [`POSITIVE_INIT_WEIGHT`].
    pub fn new(input: usize, output: usize) -> Self {
        Self {
            raw_weight: Array2::from_elem((input, output), softplus_inv(POSITIVE_INIT_WEIGHT)),
            bias: Array2::zeros((1, output)),
        }
    }

    pub fn input_size(&self) -> usize {
        self.raw_weight.nrows()
    }

    pub fn output_size(&self) -> usize {
        self.raw_weight.ncols()
    }

    pub fn effective_weight(&self) -> Array2<f64> {
        self.raw_weight.mapv(softplus)
    }

    /// Plain evaluation of `x · softplus(W) + b` for a single input vector.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_size() {
            return Err(Error::shape(format!(
                "positive_linear: expected input width {}, got {}",
                self.input_size(),
                x.len()
            )));
        }
        let w = self.effective_weight();
        Ok((0..self.output_size())
            .map(|j| {
                x.iter()
                    .enumerate()
                    .fold(self.bias[[0, j]], |acc, (i, xi)| acc + xi * w[[i, j]])
            })
            .collect())
    }

    pub fn bind(&self, b: &mut Binder, prefix: &str) -> BoundPositiveLinear {
        BoundPositiveLinear {
            raw_weight: b.bind(join(prefix, "raw_weight"), &self.raw_weight),
            bias: b.bind(join(prefix, "bias"), &self.bias),
            input: self.input_size(),
            weight: None,
        }
    }
}

impl Parameterized for PositiveLinear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Array2<f64>)) {
        f(join(prefix, "raw_weight"), &self.raw_weight);
        f(join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Array2<f64>)) {
        f(join(prefix, "raw_weight"), &mut self.raw_weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundPositiveLinear {
    raw_weight: Var,
    bias: Var,
    input: usize,
    weight: Option<Var>,
}

impl BoundPositiveLinear {
    pub fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        check_width(tape, x, self.input, "positive_linear")?;
        // softplus(raw) is recorded once per binding and shared by all steps
        let w = *self
            .weight
            .get_or_insert_with(|| tape.softplus(self.raw_weight));
        let xw = tape.matmul(x, w);
        Ok(tape.add_row(xw, self.bias))
    }
}

/// Gated recurrent unit. Gate column order is (reset, update, candidate).
///
/// ```text
/// r  = σ(x W_ir + b_ir + h W_hr + b_hr)
/// z  = σ(x W_iz + b_iz + h W_hz + b_hz)
/// n  = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub b_ih: Array2<f64>,
    pub b_hh: Array2<f64>,
}

impl Gru {
    pub fn new<R: Rng>(rng: &mut R, input: usize, hidden: usize) -> Self {
        Self {
            w_ih: glorot(rng, input, 3 * hidden),
            w_hh: glorot(rng, hidden, 3 * hidden),
            b_ih: Array2::zeros((1, 3 * hidden)),
            b_hh: Array2::zeros((1, 3 * hidden)),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Array2::zeros((input, 3 * hidden)),
            w_hh: Array2::zeros((hidden, 3 * hidden)),
            b_ih: Array2::zeros((1, 3 * hidden)),
            b_hh: Array2::zeros((1, 3 * hidden)),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.nrows()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.nrows()
    }

    pub fn bind(&self, b: &mut Binder, prefix: &str) -> BoundGru {
        BoundGru {
            w_ih: b.bind(join(prefix, "w_ih"), &self.w_ih),
            w_hh: b.bind(join(prefix, "w_hh"), &self.w_hh),
            b_ih: b.bind(join(prefix, "b_ih"), &self.b_ih),
            b_hh: b.bind(join(prefix, "b_hh"), &self.b_hh),
            input: self.input_size(),
            hidden: self.hidden_size(),
        }
    }
}

impl Parameterized for Gru {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Array2<f64>)) {
        f(join(prefix, "w_ih"), &self.w_ih);
        f(join(prefix, "w_hh"), &self.w_hh);
        f(join(prefix, "b_ih"), &self.b_ih);
        f(join(prefix, "b_hh"), &self.b_hh);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Array2<f64>)) {
        f(join(prefix, "w_ih"), &mut self.w_ih);
        f(join(prefix, "w_hh"), &mut self.w_hh);
        f(join(prefix, "b_ih"), &mut self.b_ih);
        f(join(prefix, "b_hh"), &mut self.b_hh);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundGru {
    w_ih: Var,
    w_hh: Var,
    b_ih: Var,
    b_hh: Var,
    input: usize,
    hidden: usize,
}

/// Gate activations of one GRU step, kept for inspection in tests.
#[derive(Debug, Clone, Copy)]
pub struct GruGates {
    pub reset: Var,
    pub update: Var,
    pub candidate: Var,
}

impl BoundGru {
    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn step(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        self.step_with_gates(tape, x, h).map(|(h, _)| h)
    }

    pub fn step_with_gates(&self, tape: &mut Tape, x: Var, h: Var) -> Result<(Var, GruGates)> {
        check_width(tape, x, self.input, "gru input")?;
        check_width(tape, h, self.hidden, "gru hidden")?;
        if tape.shape(x).0 != tape.shape(h).0 {
            return Err(Error::shape("gru: input and hidden batch sizes differ"));
        }
        let hs = self.hidden;
        let xw = tape.matmul(x, self.w_ih);
        let gi = tape.add_row(xw, self.b_ih);
        let hw = tape.matmul(h, self.w_hh);
        let gh = tape.add_row(hw, self.b_hh);

        let i_r = tape.slice_cols(gi, 0, hs);
        let h_r = tape.slice_cols(gh, 0, hs);
        let r_pre = tape.add(i_r, h_r);
        let r = tape.sigmoid(r_pre);

        let i_z = tape.slice_cols(gi, hs, 2 * hs);
        let h_z = tape.slice_cols(gh, hs, 2 * hs);
        let z_pre = tape.add(i_z, h_z);
        let z = tape.sigmoid(z_pre);

        let i_n = tape.slice_cols(gi, 2 * hs, 3 * hs);
        let h_n = tape.slice_cols(gh, 2 * hs, 3 * hs);
        let gated = tape.mul(r, h_n);
        let n_pre = tape.add(i_n, gated);
        let n = tape.tanh(n_pre);

        let keep = tape.one_minus(z);
        let fresh = tape.mul(keep, n);
        let carried = tape.mul(z, h);
        let h_next = tape.add(fresh, carried);
        Ok((
            h_next,
            GruGates {
                reset: r,
                update: z,
                candidate: n,
            },
        ))
    }
}

/// Long short-term memory cell. Gate column order is (input, forget, cell, output).
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub bias: Array2<f64>,
}

impl Lstm {
    pub fn new<R: Rng>(rng: &mut R, input: usize, hidden: usize) -> Self {
        let mut bias = Array2::zeros((1, 4 * hidden));
        // forget gate starts open
        for j in hidden..2 * hidden {
            bias[[0, j]] = 1.0;
        }
        Self {
            w_ih: glorot(rng, input, 4 * hidden),
            w_hh: glorot(rng, hidden, 4 * hidden),
            bias,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Array2::zeros((input, 4 * hidden)),
            w_hh: Array2::zeros((hidden, 4 * hidden)),
            bias: Array2::zeros((1, 4 * hidden)),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.nrows()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.nrows()
    }

    pub fn bind(&self, b: &mut Binder, prefix: &str) -> BoundLstm {
        BoundLstm {
            w_ih: b.bind(join(prefix, "w_ih"), &self.w_ih),
            w_hh: b.bind(join(prefix, "w_hh"), &self.w_hh),
            bias: b.bind(join(prefix, "bias"), &self.bias),
            input: self.input_size(),
            hidden: self.hidden_size(),
        }
    }
}

impl Parameterized for Lstm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Array2<f64>)) {
        f(join(prefix, "w_ih"), &self.w_ih);
        f(join(prefix, "w_hh"), &self.w_hh);
        f(join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Array2<f64>)) {
        f(join(prefix, "w_ih"), &mut self.w_ih);
        f(join(prefix, "w_hh"), &mut self.w_hh);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLstm {
    w_ih: Var,
    w_hh: Var,
    bias: Var,
    input: usize,
    hidden: usize,
}

impl BoundLstm {
    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    /// One step; returns `(h, c)`.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        check_width(tape, x, self.input, "lstm input")?;
        check_width(tape, h, self.hidden, "lstm hidden")?;
        check_width(tape, c, self.hidden, "lstm cell")?;
        let hs = self.hidden;
        let xw = tape.matmul(x, self.w_ih);
        let hw = tape.matmul(h, self.w_hh);
        let pre = tape.add(xw, hw);
        let pre = tape.add_row(pre, self.bias);

        let i_pre = tape.slice_cols(pre, 0, hs);
        let f_pre = tape.slice_cols(pre, hs, 2 * hs);
        let g_pre = tape.slice_cols(pre, 2 * hs, 3 * hs);
        let o_pre = tape.slice_cols(pre, 3 * hs, 4 * hs);
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let g = tape.tanh(g_pre);
        let o = tape.sigmoid(o_pre);

        let kept = tape.mul(f, c);
        let written = tape.mul(i, g);
        let c_next = tape.add(kept, written);
        let squashed = tape.tanh(c_next);
        let h_next = tape.mul(o, squashed);
        Ok((h_next, c_next))
    }
}

/// Convenience wrappers operating on plain vectors (batch of one).
pub fn positive_linear(params: &PositiveLinear, x: &[f64]) -> Result<Vec<f64>> {
    params.apply(x)
}

pub fn gru_step(params: &Gru, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let mut b = Binder::frozen(&mut tape);
    let cell = params.bind(&mut b, "gru");
    let xv = tape.constant(row(x));
    let hv = tape.constant(row(h_prev));
    let h = cell.step(&mut tape, xv, hv)?;
    Ok(tape.value(h).iter().copied().collect())
}

pub fn lstm_step(params: &Lstm, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new();
    let mut b = Binder::frozen(&mut tape);
    let cell = params.bind(&mut b, "lstm");
    let xv = tape.constant(row(x));
    let hv = tape.constant(row(h));
    let cv = tape.constant(row(c));
    let (h, c) = cell.step(&mut tape, xv, hv, cv)?;
    Ok((
        tape.value(h).iter().copied().collect(),
        tape.value(c).iter().copied().collect(),
    ))
}

/// A `1 × n` matrix holding `values`.
pub fn row(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape")
}

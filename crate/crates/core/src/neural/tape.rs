//! Reverse-mode automatic differentiation over dense 2-D matrices.
//!
//! Every operation appends a node to the [`Tape`]; a node only refers to
//! nodes that were recorded before it, so the node order is a topological
//! order by construction. [`Tape::backward`] walks the nodes in reverse from
//! the loss and accumulates adjoints.
//!
//! Batched quantities use the row convention: a batch of `B` vectors of
//! width `n` is a `B × n` matrix, and layers multiply on the right.

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Sigmoid(usize),
    Tanh(usize),
    Softplus(usize),
    Square(usize),
    Relu(usize),
    Sum(usize),
    Concat(Vec<usize>),
    Slice(usize, usize, usize),
    Transpose(usize),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Array2<f64>,
}

/// A recording of a computation, in topological order.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`], defined for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        debug_assert_eq!(value.dim(), (1, 1));
        value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value)
    }

    /// An input that is never differentiated (its adjoint is still reported).
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Const, value)
    }

    pub fn scalar_constant(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: operand shapes differ"
        );
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (_, k) = self.shape(a);
        let (k2, _) = self.shape(b);
        assert_eq!(k, k2, "matmul: inner dimensions differ");
        let value = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a.0, b.0), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let value = self.value(a) + self.value(b);
        self.push(Op::Add(a.0, b.0), value)
    }

    /// `a + row`, broadcasting the `1 × n` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "add_row: row must be 1 x {n}");
        let value = self.value(a) + self.value(row);
        self.push(Op::AddRow(a.0, row.0), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let value = self.value(a) - self.value(b);
        self.push(Op::Sub(a.0, b.0), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let value = self.value(a) * self.value(b);
        self.push(Op::Mul(a.0, b.0), value)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        self.push(Op::Scale(a.0, k), value)
    }

    /// `a + c` for a scalar constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        self.push(Op::Offset(a.0), value)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.offset(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(Op::Sigmoid(a.0), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a.0), value)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(softplus);
        self.push(Op::Softplus(a.0), value)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        self.push(Op::Square(a.0), value)
    }

    /// `max(0, a)`, elementwise. Used for hinge penalties, never inside a
    /// monotone layer.
    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a.0), value)
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.push(Op::Sum(a.0), Array2::from_elem((1, 1), total))
    }

    /// Column-wise concatenation; all parts must have the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat: no parts");
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Array2::zeros((rows, cols));
        let mut at = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.nrows(), rows, "concat: row counts differ");
            value.slice_mut(s![.., at..at + v.ncols()]).assign(v);
            at += v.ncols();
        }
        self.push(Op::Concat(parts.iter().map(|p| p.0).collect()), value)
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        assert!(start <= end && end <= self.shape(a).1, "slice_cols: out of range");
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(Op::Slice(a.0, start, end), value)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(Op::Transpose(a.0), value)
    }

    /// Adjoints of every node with respect to the `1 × 1` node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss node, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Const => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[*b].value.t());
                    let gb = self.nodes[*a].value.t().dot(&g);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g.clone());
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut adj, *row, gr);
                    accumulate(&mut adj, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, -&g);
                    accumulate(&mut adj, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[*b].value;
                    let gb = &g * &self.nodes[*a].value;
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Scale(a, k) => accumulate(&mut adj, *a, &g * *k),
                Op::Offset(a) => accumulate(&mut adj, *a, g.clone()),
                Op::Sigmoid(a) => {
                    let d = node.value.mapv(|s| s * (1.0 - s));
                    accumulate(&mut adj, *a, &g * &d);
                }
                Op::Tanh(a) => {
                    let d = node.value.mapv(|t| 1.0 - t * t);
                    accumulate(&mut adj, *a, &g * &d);
                }
                Op::Softplus(a) => {
                    let d = self.nodes[*a].value.mapv(sigmoid);
                    accumulate(&mut adj, *a, &g * &d);
                }
                Op::Square(a) => {
                    let d = self.nodes[*a].value.mapv(|x| 2.0 * x);
                    accumulate(&mut adj, *a, &g * &d);
                }
                Op::Relu(a) => {
                    let d = self.nodes[*a].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut adj, *a, &g * &d);
                }
                Op::Sum(a) => {
                    let shape = self.nodes[*a].value.dim();
                    accumulate(&mut adj, *a, Array2::from_elem(shape, g[[0, 0]]));
                }
                Op::Concat(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.ncols();
                        accumulate(&mut adj, p, g.slice(s![.., at..at + w]).to_owned());
                        at += w;
                    }
                }
                Op::Slice(a, start, end) => {
                    let mut full = Array2::zeros(self.nodes[*a].value.dim());
                    full.slice_mut(s![.., *start..*end]).assign(&g);
                    accumulate(&mut adj, *a, full);
                }
                Op::Transpose(a) => accumulate(&mut adj, *a, g.t().to_owned()),
            }
            adj[i] = Some(g);
        }

        Ok(Gradients {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.dim()).collect(),
        })
    }
}

fn accumulate(adj: &mut [Option<Array2<f64>>], at: usize, g: Array2<f64>) {
    match &mut adj[at] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// ∂loss/∂v. Zero for nodes the loss does not depend on.
    pub fn wrt(&self, v: Var) -> Array2<f64> {
        match &self.adjoints[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[v.0]),
        }
    }

    pub fn scalar_wrt(&self, v: Var) -> f64 {
        self.adjoints[v.0].as_ref().map_or(0.0, |g| g[[0, 0]])
    }
}

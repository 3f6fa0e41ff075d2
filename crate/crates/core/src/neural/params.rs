use std::collections::BTreeMap;

use ndarray::Array2;

use super::tape::{Tape, Var};

/// Anything holding named trainable matrices.
///
/// `visit` and `visit_mut` must enumerate parameters in the same order.
pub trait Parameterized {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Array2<f64>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Array2<f64>));

    fn named_params(&self) -> Vec<(String, Array2<f64>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, value| out.push((name, value.clone())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, value| n += value.len());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Places parameters on a tape, either as differentiable leaves (training)
/// or as constants (frozen inference).
pub struct Binder<'t> {
    pub tape: &'t mut Tape,
    trainable: bool,
    bound: Vec<(String, Var)>,
}

impl<'t> Binder<'t> {
    pub fn trainable(tape: &'t mut Tape) -> Self {
        Self {
            tape,
            trainable: true,
            bound: Vec::new(),
        }
    }

    pub fn frozen(tape: &'t mut Tape) -> Self {
        Self {
            tape,
            trainable: false,
            bound: Vec::new(),
        }
    }

    pub fn bind(&mut self, name: String, value: &Array2<f64>) -> Var {
        if self.trainable {
            let v = self.tape.leaf(value.clone());
            self.bound.push((name, v));
            v
        } else {
            self.tape.constant(value.clone())
        }
    }

    /// Parameter name → node, for gradient extraction after `backward`.
    pub fn into_bound(self) -> Vec<(String, Var)> {
        self.bound
    }
}

/// Gradients keyed by parameter name.
pub type GradMap = BTreeMap<String, Array2<f64>>;

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::{GradMap, Parameterized};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Array2<f64>>,
    second: BTreeMap<String, Array2<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Array2<f64>> {
        self.first.get(name)
    }

    /// Applies one update. Parameters without a gradient entry are left as is.
    ///
    /// Every gradient is checked before anything is modified, so a
    /// non-finite gradient leaves both the parameters and the state intact.
    pub fn update<P: Parameterized + ?Sized>(&mut self, params: &mut P, grads: &GradMap) -> Result<()> {
        for (name, g) in grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        let mut shape_error = None;
        params.visit("", &mut |name, value| {
            if let Some(g) = grads.get(&name) {
                if g.dim() != value.dim() && shape_error.is_none() {
                    shape_error = Some(format!(
                        "gradient for `{name}` has shape {:?}, parameter has {:?}",
                        g.dim(),
                        value.dim()
                    ));
                }
            }
        });
        if let Some(msg) = shape_error {
            return Err(Error::Shape(msg));
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let first = &mut self.first;
        let second = &mut self.second;
        params.visit_mut("", &mut |name, value| {
            let Some(g) = grads.get(&name) else { return };
            let m = first
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(value.dim()));
            let v = second
                .entry(name)
                .or_insert_with(|| Array2::zeros(value.dim()));
            ndarray::Zip::from(value)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        });
        Ok(())
    }
}

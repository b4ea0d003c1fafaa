use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParameterSet;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Adam moments for one flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    lr: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Adam {
            lr,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, values: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..values.len() {
            let g = grad[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            values[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Optimizer over a [`ParameterSet`], with per-path moment buffers.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    moments: BTreeMap<String, Adam>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Contract(format!("learning rate {lr} must be finite and ≥ 0")));
        }
        Ok(OptimizerState {
            kind,
            lr,
            step: 0,
            moments: BTreeMap::new(),
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&mut self, params: &mut ParameterSet) -> Result<()> {
        if let Some((path, _)) = params.iter().find(|(_, p)| p.trainable && p.grad.is_none()) {
            return Err(Error::Contract(format!("parameter `{path}` has no gradient")));
        }
        for (path, p) in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let grad = p.grad.take().expect("checked above");
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, g) in p.value.data_mut().iter_mut().zip(&grad) {
                        *w -= self.lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let lr = self.lr;
                    let n = grad.len();
                    let buf = self
                        .moments
                        .entry(path.to_string())
                        .or_insert_with(|| Adam::new(lr, n));
                    buf.step(p.value.data_mut(), &grad);
                }
            }
        }
        self.step += 1;
        params.zero_grads();
        Ok(())
    }
}

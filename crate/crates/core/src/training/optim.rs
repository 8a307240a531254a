use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::params::{flatten_trainable, load_trainable, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state over the trainable tensors of one parameter set, in
/// visit order. Buffers are never touched.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub adam: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, adam: AdamConfig, len: usize) -> Self {
        let moments = if kind == OptimizerKind::Adam { len } else { 0 };
        Optimizer {
            kind,
            adam,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            step: 0,
        }
    }

    /// One update with the decay folded into the gradient (`g + λθ`).
    pub fn update<P: ParamSet + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &P,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        let mut theta = flatten_trainable(params);
        let g = flatten_trainable(grads);
        contract!(theta.len() == g.len(), "gradient layout mismatch");
        self.update_flat(&mut theta, &g, lr, weight_decay)?;
        load_trainable(params, &theta);
        Ok(())
    }

    pub fn update_flat(
        &mut self,
        theta: &mut [f64],
        grad: &[f64],
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        contract!(theta.len() == grad.len(), "gradient length mismatch");
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (t, g) in theta.iter_mut().zip(grad) {
                    *t -= lr * (g + weight_decay * *t);
                }
            }
            OptimizerKind::Adam => {
                contract!(self.m.len() == theta.len(), "optimizer state size mismatch");
                let AdamConfig { beta1, beta2, eps } = self.adam;
                let c1 = 1.0 - beta1.powf(self.step as f64);
                let c2 = 1.0 - beta2.powf(self.step as f64);
                for i in 0..theta.len() {
                    let g = grad[i] + weight_decay * theta[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm<P: ParamSet + ?Sized>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = crate::params::global_norm(grads);
    if norm > max_norm {
        crate::params::scale_trainable(grads, max_norm / norm);
    }
    norm
}

use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
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

/// First and second moment estimates; slots stay empty for frozen parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// One bias-corrected Adam update of every parameter with a gradient.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState, cfg: &AdamConfig) {
    if state.m.len() != net.params.len() {
        state.m = vec![Vec::new(); net.params.len()];
        state.v = vec![Vec::new(); net.params.len()];
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (i, g) in grads.0.iter().enumerate() {
        let Some(g) = g else { continue };
        let p = &mut net.params[i].data;
        if state.m[i].is_empty() {
            state.m[i] = vec![0.0; p.len()];
            state.v[i] = vec![0.0; p.len()];
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            p[j] -= cfg.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.eps);
        }
    }
}

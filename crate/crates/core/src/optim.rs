//! Bias-corrected Adam with per-parameter step counts.

use std::collections::HashMap;

use crate::error::{Result, UavmError};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates of one tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One in-place Adam update of `params` given `grads`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, hp: AdamHyper) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(UavmError::Dimension {
            op: "adam_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len(), state.m.len(), state.v.len()],
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

/// Adam over a [`ParamStore`]. Only parameters that receive a gradient in
/// a step are touched, and their step counters advance independently.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub hyper: AdamHyper,
    states: HashMap<String, AdamState>,
}

impl Adam {
    pub fn new(hyper: AdamHyper) -> Self {
        Self {
            hyper,
            states: HashMap::new(),
        }
    }

    pub fn state(&self, name: &str) -> Option<&AdamState> {
        self.states.get(name)
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[(String, Vec<f64>)], lr: f64) -> Result<()> {
        let hp = AdamHyper { lr, ..self.hyper };
        for (name, g) in grads {
            let t = store
                .get_mut(name)
                .ok_or_else(|| UavmError::config(format!("gradient for unknown parameter `{name}`")))?;
            let state = self
                .states
                .entry(name.clone())
                .or_insert_with(|| AdamState::new(t.numel()));
            adam_step(t.data_mut(), g, state, hp)?;
        }
        Ok(())
    }
}

//! Adam with bias correction and per-group learning rates.

use serde::{Deserialize, Serialize};

use crate::network::{layer_group, Grads, ParamGroup, Params};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning rate per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrMap {
    pub backbone: f64,
    pub heads: f64,
}

impl LrMap {
    pub fn get(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Backbone => self.backbone,
            ParamGroup::Heads => self.heads,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first: Params,
    pub second: Params,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }
}

/// One update with step index `state.step + 1`.
pub fn adam_step(
    params: &mut Params,
    grads: &Grads,
    state: &mut AdamState,
    lr: &LrMap,
    h: &AdamHyper,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    for (li, ((p, g), (m, v))) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(
            state
                .first
                .layers
                .iter_mut()
                .zip(state.second.layers.iter_mut()),
        )
        .enumerate()
    {
        let rate = lr.get(layer_group(li));
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = h.beta1 * *m + (1.0 - h.beta1) * g;
                *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= rate * m_hat / (v_hat.sqrt() + h.eps);
            }
        };
        update(&mut p.weight, &g.weight, &mut m.weight, &mut v.weight);
        update(&mut p.bias, &g.bias, &mut m.bias, &mut v.bias);
    }
}

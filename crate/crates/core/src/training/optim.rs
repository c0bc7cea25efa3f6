use serde::{Deserialize, Serialize};

use crate::array::Array;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// First and second moment buffers plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Array]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect();
        AdamState { m: zeros(), v: zeros(), t: 0 }
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [Array], grads: &[Array], state: &mut AdamState, lr: f64, betas: (f64, f64), eps: f64) {
    let (b1, b2) = betas;
    state.t += 1;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

pub fn sgd_step(params: &mut [Array], grads: &[Array], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        for (w, &g) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * g;
        }
    }
}

/// Zero the gradient entries of pruned weights.
pub fn mask_grads(grads: &mut [Array], masks: &[Array]) {
    for (g, m) in grads.iter_mut().zip(masks) {
        for (g, &keep) in g.data_mut().iter_mut().zip(m.data()) {
            if keep == 0.0 {
                *g = 0.0;
            }
        }
    }
}

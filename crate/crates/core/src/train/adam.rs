//! Adam with bias correction.

use crate::numerics::{NumericsError, ParamStore, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One update of every parameter from its accumulated gradient.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<(), NumericsError> {
    if state.m.len() != store.len() {
        return Err(NumericsError::ShapeMismatch {
            op: "adam_step",
            detail: format!("state tracks {} parameters, store has {}", state.m.len(), store.len()),
        });
    }
    state.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for (idx, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let p = store.get_mut(id);
        let (m, v) = (&mut state.m[idx], &mut state.v[idx]);
        if m.shape() != p.value.shape() || p.grad.shape() != p.value.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "adam_step",
                detail: format!("parameter {} changed shape", p.name),
            });
        }
        let grad = p.grad.data();
        let value = p.value.data_mut();
        for (((w, &g), mi), vi) in value.iter_mut().zip(grad).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

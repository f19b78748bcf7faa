use alloc::string::ToString;
use alloc::vec;

use crate::error::{Error, Result};
use crate::tensor::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clip applied to the gradients before the update.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(10.0),
        }
    }
}

/// First and second moment buffers plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState {
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamSet, max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|(_, g)| g.data().iter())
        .map(|x| x * x)
        .sum();
    let norm = libm::sqrt(sq);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// One bias-corrected Adam update. Increments `state.t` before use, so the
/// first call runs with `t = 1`. Returns the unclipped gradient norm.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<f64> {
    for (name, p) in params.iter() {
        let g = grads.require(name)?;
        let m = state.m.require(name)?;
        let v = state.v.require(name)?;
        if g.shape() != p.shape() || m.shape() != p.shape() || v.shape() != p.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    let mut grads = grads.clone();
    let norm = match cfg.clip_norm {
        Some(max) => clip_global_norm(&mut grads, max),
        None => clip_global_norm(&mut grads, f64::INFINITY),
    };
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    let names: vec::Vec<_> = params.names().map(|n| n.to_string()).collect();
    for name in &names {
        let g = grads.get(name).expect("checked").data();
        let m = state.m.get_mut(name).expect("checked").data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        }
        let v = state.v.get_mut(name).expect("checked").data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
        }
        let m = state.m.get(name).expect("checked").data();
        let v = state.v.get(name).expect("checked").data();
        let p = params.get_mut(name).expect("checked").data_mut();
        for ((pi, mi), vi) in p.iter_mut().zip(m).zip(v) {
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            *pi -= cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
        }
    }
    Ok(norm)
}

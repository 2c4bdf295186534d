//! First-order optimizers over a [`ParamStore`].
//!
//! Both optimizers validate every gradient before touching any parameter: a
//! single non-finite entry aborts the whole step and names the parameter.

use serde::{Deserialize, Serialize};

use super::{ParamGrads, ParamId, ParamStore, Tensor};
use crate::{Error, Result};

fn check_finite(params: &ParamStore, grads: &ParamGrads) -> Result<()> {
    for (id, name, value) in params.iter() {
        if let Some(g) = grads.get(id) {
            if g.shape() != value.shape() {
                return Err(Error::Shape {
                    op: "optimizer gradient",
                    lhs: value.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment buffers plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One AdamW update with decoupled weight decay:
/// `p ← p − lr·(m̂/(√v̂ + eps) + weight_decay·p)`.
pub fn adamw_step(
    params: &mut ParamStore,
    grads: &ParamGrads,
    state: &mut AdamState,
    cfg: &AdamWConfig,
) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Config(
            "AdamW state does not match the parameter set".into(),
        ));
    }
    check_finite(params, grads)?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let id = ParamId(i);
        let g = grads.get(id);
        let p = params.get_mut(id).data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for j in 0..p.len() {
            let gj = g.map_or(0.0, |g| g.data()[j]);
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * p[j]);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdagradConfig {
    pub lr: f64,
    pub eps: f64,
}

impl Default for AdagradConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            eps: 1e-10,
        }
    }
}

/// Accumulated squared gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct AdagradState {
    pub sum_sq: Vec<Tensor>,
}

impl AdagradState {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            sum_sq: params
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.shape()))
                .collect(),
        }
    }
}

/// `acc ← acc + g²; p ← p − lr·g/(√acc + eps)`.
pub fn adagrad_step(
    params: &mut ParamStore,
    grads: &ParamGrads,
    state: &mut AdagradState,
    cfg: &AdagradConfig,
) -> Result<()> {
    if state.sum_sq.len() != params.len() {
        return Err(Error::Config(
            "Adagrad state does not match the parameter set".into(),
        ));
    }
    check_finite(params, grads)?;
    for i in 0..params.len() {
        let id = ParamId(i);
        let Some(g) = grads.get(id) else { continue };
        let p = params.get_mut(id).data_mut();
        let acc = state.sum_sq[i].data_mut();
        for ((pj, aj), gj) in p.iter_mut().zip(acc.iter_mut()).zip(g.data()) {
            *aj += gj * gj;
            *pj -= cfg.lr * gj / (aj.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::ParamSet;
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments shaped like the parameters, plus the step count.
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    pub first: S,
    pub second: S,
    pub step: u64,
}

impl<S: ParamSet + Clone> AdamState<S> {
    pub fn new(params: &S, config: AdamConfig) -> Self {
        let mut zeros = params.clone();
        for m in zeros.tensors_mut() {
            m.data_mut().fill(0.0);
        }
        AdamState {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }
}

/// One Adam update of `params` in place.
pub fn adam_step<S: ParamSet>(params: &mut S, grads: &S, state: &mut AdamState<S>) -> Result<()> {
    let grads = grads.tensors();
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let mut params = params.tensors_mut();
    let mut first = state.first.tensors_mut();
    let mut second = state.second.tensors_mut();
    if grads.len() != params.len() || first.len() != params.len() || second.len() != params.len() {
        return Err(Error::contract("optimizer state and gradients do not match the parameters"));
    }
    for (p, (name, g)) in params.iter().zip(&grads) {
        if p.shape() != g.shape() {
            return Err(Error::contract(alloc::format!(
                "gradient `{name}` has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(beta1, t);
    let c2 = 1.0 - libm::pow(beta2, t);
    for (((p, (_, g)), m), v) in params.iter_mut().zip(&grads).zip(first.iter_mut()).zip(second.iter_mut()) {
        update(p, g, m, v, lr, beta1, beta2, epsilon, c1, c2);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn update(p: &mut Matrix, g: &Matrix, m: &mut Matrix, v: &mut Matrix, lr: f64, b1: f64, b2: f64, eps: f64, c1: f64, c2: f64) {
    let p = p.data_mut();
    let (m, v) = (m.data_mut(), v.data_mut());
    for (i, &gi) in g.data().iter().enumerate() {
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
    }
}

//! Adam with bias correction, one moment pair per model tensor.

use crate::data::PAD;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers in canonical parameter order plus the step
/// counter.
#[derive(Debug, Clone)]
pub struct AdamState<E: Element> {
    m: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
    step: u64,
    pub config: AdamConfig,
}

impl<E: Element> AdamState<E> {
    pub fn new(params: &ModelParams<E>, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor<E>> = params
            .entries()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            config,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update on a single tensor. `t` is the 1-based step number used
/// for bias correction.
pub fn adam_update<E: Element>(
    theta: &mut Tensor<E>,
    grad: &Tensor<E>,
    m: &mut Tensor<E>,
    v: &mut Tensor<E>,
    t: u64,
    config: &AdamConfig,
) {
    debug_assert!(t >= 1);
    let b1 = E::of(config.beta1);
    let b2 = E::of(config.beta2);
    let one_minus_b1 = E::of(1.0 - config.beta1);
    let one_minus_b2 = E::of(1.0 - config.beta2);
    let lr = E::of(config.lr);
    let eps = E::of(config.eps);
    let corr1 = E::of(1.0 - config.beta1.powi(t as i32));
    let corr2 = E::of(1.0 - config.beta2.powi(t as i32));

    let (theta, grad) = (theta.data_mut(), grad.data());
    let (m, v) = (m.data_mut(), v.data_mut());
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + one_minus_b1 * g;
        v[i] = b2 * v[i] + one_minus_b2 * g * g;
        let m_hat = m[i] / corr1;
        let v_hat = v[i] / corr2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Applies one optimizer step over all parameters. `grads` must align with
/// the canonical entry order. A non-finite gradient anywhere aborts the
/// whole step — no tensor is touched — naming the offending parameter.
/// After the update, the PAD embedding row is forced back to zero.
pub fn adam_step<E: Element>(
    params: &mut ModelParams<E>,
    grads: &[Tensor<E>],
    state: &mut AdamState<E>,
) -> Result<()> {
    let names: Vec<&'static str> = params.entries().iter().map(|(n, _)| *n).collect();
    if grads.len() != names.len() {
        return Err(Error::Contract(format!(
            "expected {} gradient tensors, got {}",
            names.len(),
            grads.len()
        )));
    }
    for (i, (name, (_, param))) in names.iter().zip(params.entries().iter()).enumerate() {
        if grads[i].shape() != param.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: param.shape().to_vec(),
                rhs: grads[i].shape().to_vec(),
            });
        }
        if grads[i].data().iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient for {name}; step aborted"
            )));
        }
    }

    state.step += 1;
    let t = state.step;
    let config = state.config;
    for (i, (_, param)) in params.entries_mut().into_iter().enumerate() {
        adam_update(param, &grads[i], &mut state.m[i], &mut state.v[i], t, &config);
    }

    let d = params.embed.shape()[1];
    params.embed.data_mut()[PAD * d..(PAD + 1) * d].fill(E::zero());
    Ok(())
}

//! Primary-capsule construction and sharing-weight dynamic routing.

use crate::error::{Error, Result};
use crate::model::{BoundParams, ModelConfig};
use crate::tape::{GradTape, ValueId};
use crate::tensor::{Element, Tensor};

/// Convolves the weighted hidden states (same padding, odd kernel), then
/// reshapes the `[t_max × conv_channels]` output row-major — position-major,
/// channel-blocks-minor — into `[primary_count × primary_dim]` capsules and
/// squashes each one.
pub fn build_primary_capsules<E: Element>(
    tape: &mut GradTape<E>,
    weighted: ValueId,
    bound: &BoundParams,
    config: &ModelConfig,
) -> Result<ValueId> {
    let conv = tape.conv1d_same(weighted, bound.conv_w, bound.conv_b)?;
    let capsules = tape.reshape(conv, vec![config.primary_count, config.primary_dim])?;
    tape.squash(capsules)
}

/// Dynamic routing with one shared transform per parent.
///
/// Predictions p̂_{j|i} = W_j·p_i are computed once. Logits start at zero
/// (every child splits its mass equally), and each iteration takes the
/// parent-axis softmax c, combines q̃_j = Σ_i c_ij·p̂_{j|i}, squashes, and —
/// except after the last iteration — reinforces logits by the agreement
/// q_j·p̂_{j|i}. Returns the final parents `[N × D_next]` and the couplings
/// `[M × N]` that produced them.
pub fn route<E: Element>(
    tape: &mut GradTape<E>,
    children: ValueId,
    weights: ValueId,
    iters: usize,
) -> Result<(ValueId, ValueId)> {
    if iters == 0 {
        return Err(Error::Contract(
            "routing requires at least one iteration".into(),
        ));
    }
    let m = tape.value(children).shape()[0];
    let n = tape.value(weights).shape()[0];

    let p_hat = tape.caps_predict(weights, children)?;
    let mut b = tape.leaf(Tensor::zeros(vec![m, n]));
    for i in 0..iters {
        let c = tape.softmax_rows(b)?;
        let combined = tape.route_combine(c, p_hat)?;
        let q = tape.squash(combined)?;
        if i + 1 == iters {
            return Ok((q, c));
        }
        b = tape.route_agreement(b, q, p_hat)?;
    }
    unreachable!("loop returns on the final iteration")
}

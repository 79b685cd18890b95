//! Location proximity: amplify hidden states of words near the aspect term.

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tape::{GradTape, ValueId};
use crate::tensor::Element;

/// Per-position weights l_t = 1 + max(0, α + n/β − |γ·(k−t)|) for the
/// valid span and exactly 0 for padding positions. Positions `t` and the
/// aspect anchor `k` are 1-based (the returned vector is indexed t−1).
pub fn location_weights(n: usize, k: usize, config: &ModelConfig) -> Result<Vec<f64>> {
    if n == 0 || n > config.t_max {
        return Err(Error::Contract(format!(
            "sentence length {n} outside 1..={}",
            config.t_max
        )));
    }
    if k == 0 || k > n {
        return Err(Error::Contract(format!(
            "aspect position {k} outside 1..={n}"
        )));
    }
    let mut l = vec![0.0; config.t_max];
    let reach = config.alpha + n as f64 / config.beta;
    for (t, slot) in l.iter_mut().enumerate().take(n) {
        let dist = (config.gamma * (k as f64 - (t + 1) as f64)).abs();
        *slot = 1.0 + (reach - dist).max(0.0);
    }
    Ok(l)
}

/// Scales every row of the `[t_max × 2H]` hidden-state matrix by its
/// position weight: ĥ_t = l_t · h_t.
pub fn apply_proximity<E: Element>(
    tape: &mut GradTape<E>,
    hidden: ValueId,
    l: &[f64],
    config: &ModelConfig,
) -> Result<ValueId> {
    let shape = tape.value(hidden).shape().to_vec();
    if shape.len() != 2 || shape[0] != config.t_max || l.len() != config.t_max {
        return Err(Error::ShapeMismatch {
            op: "apply_proximity",
            lhs: shape,
            rhs: vec![l.len()],
        });
    }
    let width = shape[1];
    let mut mask = Vec::with_capacity(config.t_max * width);
    for &lt in l {
        mask.extend(std::iter::repeat_n(E::of(lt), width));
    }
    tape.mul_const(hidden, &mask)
}

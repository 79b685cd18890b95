//! Bidirectional GRU encoder: token ids → `[t_max × 2H]` hidden states.

use crate::error::{Error, Result};
use crate::model::{BoundGru, BoundParams, ModelConfig};
use crate::rng::Rng;
use crate::tape::{GradTape, ValueId};
use crate::tensor::{Element, Tensor};

/// Embeds a token sequence, runs one GRU per direction from zero initial
/// state, and stacks the per-step concatenations `[h_fwd(t), h_bwd(t)]`
/// into a `[t_max × 2H]` matrix whose rows past the sentence length are
/// zero. In training mode the result passes through dropout (one mask
/// draw per element, padding rows included).
pub fn encode_sequence<E: Element>(
    tape: &mut GradTape<E>,
    bound: &BoundParams,
    token_ids: &[usize],
    config: &ModelConfig,
    rng: &mut Rng,
    training: bool,
) -> Result<ValueId> {
    let n = token_ids.len();
    if n == 0 {
        return Err(Error::Contract("cannot encode an empty sentence".into()));
    }
    if n > config.t_max {
        return Err(Error::Contract(format!(
            "sentence has {n} tokens but t_max is {}",
            config.t_max
        )));
    }

    let x = tape.gather(bound.embed, token_ids)?;
    let xs: Vec<ValueId> = (0..n).map(|t| tape.row(x, t)).collect::<Result<_>>()?;

    let h = config.gru_hidden;
    let step = |tape: &mut GradTape<E>, g: &BoundGru, x_t: ValueId, prev: ValueId| {
        tape.gru_step(
            x_t, prev, g.wz, g.uz, g.bz, g.wr, g.ur, g.br, g.wh, g.uh, g.bh,
        )
    };

    let mut fwd_states = Vec::with_capacity(n);
    let mut state = tape.leaf(Tensor::zeros(vec![h]));
    for &x_t in &xs {
        state = step(tape, &bound.gru_fwd, x_t, state)?;
        fwd_states.push(state);
    }

    let mut bwd_states = Vec::with_capacity(n);
    let mut state = tape.leaf(Tensor::zeros(vec![h]));
    for t in (0..n).rev() {
        state = step(tape, &bound.gru_bwd, xs[t], state)?;
        bwd_states.push(state);
    }
    bwd_states.reverse();

    let rows: Vec<ValueId> = (0..n)
        .map(|t| tape.concat_pair(fwd_states[t], bwd_states[t]))
        .collect::<Result<_>>()?;
    let stacked = tape.stack_rows(&rows, config.t_max)?;
    tape.dropout(stacked, config.dropout, rng, training)
}

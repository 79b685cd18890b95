//! Margin and reconstruction losses, recorded on the tape so one backward
//! pass covers the whole objective.

use crate::data::Example;
use crate::error::{Error, Result};
use crate::model::{self, BoundParams, ModelConfig};
use crate::rng::Rng;
use crate::tape::{GradTape, ValueId, NORM_GUARD};
use crate::tensor::{Element, Tensor};

/// Aggregated batch objective. `total` is formed from `margin` and
/// `reconstruction` in a fixed accumulation order, so reruns reproduce it
/// bitwise.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub margin: f64,
    pub reconstruction: f64,
    pub total: f64,
    /// Per-class margin terms summed over the batch.
    pub per_class: Vec<f64>,
}

/// One example's loss nodes, still on the tape.
#[derive(Debug, Clone)]
pub struct ExampleLoss {
    pub margin: ValueId,
    pub reconstruction: ValueId,
    /// This example's per-class margin terms.
    pub per_class: Vec<f64>,
    /// Whether a reconstruction vector fell below the norm guard and had
    /// its term zeroed.
    pub degenerate: (bool, bool),
}

pub(crate) fn one_hot(class: usize, len: usize) -> Result<Vec<f64>> {
    if class >= len {
        return Err(Error::Contract(format!(
            "class {class} out of range for {len} capsules"
        )));
    }
    let mut mask = vec![0.0; len];
    mask[class] = 1.0;
    Ok(mask)
}

/// Margin loss over capsule lengths: the true class is pushed above m⁺
/// and every other class below m⁻, both penalties squared and summed with
/// no down-weighting on the negative term. Returns the scalar node plus
/// the per-class terms.
pub fn margin_loss<E: Element>(
    tape: &mut GradTape<E>,
    v_prob: ValueId,
    mask: &[f64],
    m_plus: f64,
    m_minus: f64,
) -> Result<(ValueId, Vec<f64>)> {
    let c = tape.value(v_prob).len();
    if c != mask.len() {
        return Err(Error::ShapeMismatch {
            op: "margin_loss",
            lhs: tape.value(v_prob).shape().to_vec(),
            rhs: vec![mask.len()],
        });
    }
    if mask.iter().filter(|&&m| m == 1.0).count() != 1
        || mask.iter().any(|&m| m != 0.0 && m != 1.0)
    {
        return Err(Error::Contract(format!(
            "margin mask must be one-hot, got {mask:?}"
        )));
    }

    let keep: Vec<E> = mask.iter().map(|&m| E::of(m)).collect();
    let complement: Vec<E> = mask.iter().map(|&m| E::of(1.0 - m)).collect();

    // max(0, m⁺ − v)² on the true class…
    let pos_slack = tape.affine(v_prob, E::of(-1.0), E::of(m_plus))?;
    let pos_relu = tape.relu(pos_slack)?;
    let pos_sq = tape.square(pos_relu)?;
    let pos_term = tape.mul_const(pos_sq, &keep)?;
    // …and max(0, v − m⁻)² on the rest.
    let neg_slack = tape.affine(v_prob, E::of(1.0), E::of(-m_minus))?;
    let neg_relu = tape.relu(neg_slack)?;
    let neg_sq = tape.square(neg_relu)?;
    let neg_term = tape.mul_const(neg_sq, &complement)?;

    let per_class_node = tape.add(pos_term, neg_term)?;
    let per_class = tape
        .value(per_class_node)
        .data()
        .iter()
        .map(|&v| v.to_f64())
        .collect();
    let ones = vec![E::of(1.0); c];
    let scalar = tape.dot_const(per_class_node, &ones)?;
    Ok((scalar, per_class))
}

/// Reconstruction loss: pull v_recon1 toward the aspect embedding and push
/// v_recon2 away, both direction-only — L2 = −v_asp·v̂₁ + v_asp·v̂₂. The
/// aspect vector enters as a constant. A reconstruction below the norm
/// guard contributes exactly 0 and is flagged.
pub fn reconstruction_loss<E: Element>(
    tape: &mut GradTape<E>,
    v_recon1: ValueId,
    v_recon2: ValueId,
    v_asp: &[E],
) -> Result<(ValueId, (bool, bool))> {
    let degenerate = (
        tape.value(v_recon1).norm().to_f64() < NORM_GUARD,
        tape.value(v_recon2).norm().to_f64() < NORM_GUARD,
    );
    let toward = tape.normalized_dot_const(v_recon1, v_asp)?;
    let away = tape.normalized_dot_const(v_recon2, v_asp)?;
    let neg_toward = tape.scale(toward, E::of(-1.0))?;
    let scalar = tape.add(neg_toward, away)?;
    Ok((scalar, degenerate))
}

/// Mean of the embedding rows of the aspect's tokens, read out of the
/// current table as a plain constant vector.
pub fn aspect_target<E: Element>(embed: &Tensor<E>, token_ids: &[usize]) -> Result<Vec<E>> {
    if token_ids.is_empty() {
        return Err(Error::Contract(
            "aspect target needs at least one token".into(),
        ));
    }
    let rows = embed.shape()[0];
    let d = embed.shape()[1];
    let mut mean = vec![E::zero(); d];
    for &id in token_ids {
        if id >= rows {
            return Err(Error::Contract(format!(
                "aspect token id {id} outside embedding table with {rows} rows"
            )));
        }
        for (m, &v) in mean.iter_mut().zip(&embed.data()[id * d..(id + 1) * d]) {
            *m += v;
        }
    }
    let inv = E::of(1.0 / token_ids.len() as f64);
    for m in &mut mean {
        *m *= inv;
    }
    Ok(mean)
}

/// Runs the model and both loss heads for one example on `tape`.
pub fn example_loss<E: Element>(
    tape: &mut GradTape<E>,
    bound: &BoundParams,
    example: &Example,
    config: &ModelConfig,
    rng: &mut Rng,
    training: bool,
    use_proximity: bool,
) -> Result<ExampleLoss> {
    let v_asp = aspect_target(tape.value(bound.embed), &example.aspect_token_ids)?;
    example_loss_with_target(tape, bound, example, config, rng, training, use_proximity, &v_asp)
}

/// [`example_loss`] with the reconstruction target supplied by the caller
/// instead of read from the live embedding table. The target is a constant
/// either way — this entry point exists so a finite-difference probe can
/// hold it fixed while the table itself is perturbed.
#[allow(clippy::too_many_arguments)]
pub fn example_loss_with_target<E: Element>(
    tape: &mut GradTape<E>,
    bound: &BoundParams,
    example: &Example,
    config: &ModelConfig,
    rng: &mut Rng,
    training: bool,
    use_proximity: bool,
    v_asp: &[E],
) -> Result<ExampleLoss> {
    let mask = one_hot(example.label, config.sentiment_count)?;
    let trace = model::forward(tape, bound, example, config, rng, training, use_proximity)?;
    let (margin, per_class) =
        margin_loss(tape, trace.v_prob, &mask, config.m_plus, config.m_minus)?;
    let (v1, v2) = model::reconstruct(tape, trace.sentiment, &mask, bound)?;
    let (reconstruction, degenerate) = reconstruction_loss(tape, v1, v2, v_asp)?;

    Ok(ExampleLoss {
        margin,
        reconstruction,
        per_class,
        degenerate,
    })
}

/// Sums per-example losses into the batch objective Σ(L1 + λ·L2) and reads
/// back the breakdown.
pub fn total_loss<E: Element>(
    tape: &mut GradTape<E>,
    losses: &[ExampleLoss],
    lambda: f64,
) -> Result<(ValueId, LossBreakdown)> {
    let first = losses
        .first()
        .ok_or_else(|| Error::Contract("cannot total an empty batch".into()))?;

    let mut margin_sum = first.margin;
    let mut recon_sum = first.reconstruction;
    for item in &losses[1..] {
        margin_sum = tape.add(margin_sum, item.margin)?;
        recon_sum = tape.add(recon_sum, item.reconstruction)?;
    }
    let weighted = tape.scale(recon_sum, E::of(lambda))?;
    let total = tape.add(margin_sum, weighted)?;

    let classes = first.per_class.len();
    let mut per_class = vec![0.0; classes];
    for item in losses {
        for (acc, v) in per_class.iter_mut().zip(&item.per_class) {
            *acc += v;
        }
    }

    Ok((
        total,
        LossBreakdown {
            margin: tape.value(margin_sum).data()[0].to_f64(),
            reconstruction: tape.value(recon_sum).data()[0].to_f64(),
            total: tape.value(total).data()[0].to_f64(),
            per_class,
        },
    ))
}

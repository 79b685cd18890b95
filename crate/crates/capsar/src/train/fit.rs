//! The epoch loop: shuffle, batch, forward with proximity weighting and
//! dropout, backward, Adam step, dev evaluation, best-model retention.

use crate::data::{batch_iter, Batch, Example};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{ModelConfig, ModelParams};
use crate::rng::Rng;
use crate::tape::GradTape;
use crate::tensor::Tensor;
use crate::train::adam::{adam_step, AdamConfig, AdamState};
use crate::train::losses::{example_loss, total_loss};

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Seeds one generator that drives epoch shuffling and dropout, so a
    /// run is reproducible bit for bit.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> FitOptions {
        FitOptions {
            epochs: 80,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean total loss per training example over the epoch.
    pub train_loss: f64,
    pub dev_accuracy: f64,
    pub dev_macro_f1: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters after the final epoch.
    pub params: ModelParams<f32>,
    /// Parameters from the epoch with the best dev accuracy (ties go to
    /// the earlier epoch). The initial parameters if no epoch ran.
    pub best_params: ModelParams<f32>,
    /// Epoch that produced `best_params`; 0 if no epoch ran.
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// One optimizer step over one batch; returns the batch's total loss.
fn train_batch(
    params: &mut ModelParams<f32>,
    state: &mut AdamState<f32>,
    batch: &Batch,
    config: &ModelConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let mut tape: GradTape<f32> = GradTape::new();
    let bound = params.bind(&mut tape);
    let mut losses = Vec::with_capacity(batch.len());
    for example in &batch.examples {
        losses.push(example_loss(&mut tape, &bound, example, config, rng, true, true)?);
    }
    let (total, breakdown) = total_loss(&mut tape, &losses, config.lambda)?;

    tape.backward(total)?;
    let grads: Vec<Tensor<f32>> = bound
        .ids()
        .into_iter()
        .map(|(_, id)| tape.grad_or_zeros(id))
        .collect();
    adam_step(params, &grads, state)?;
    Ok(breakdown.total)
}

/// Trains `params` on `train`, evaluating on `dev` after every epoch.
/// `progress` is called once per completed epoch.
pub fn fit(
    train: &[Example],
    dev: &[Example],
    config: &ModelConfig,
    params: ModelParams<f32>,
    options: &FitOptions,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<FitResult> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Contract("cannot fit on an empty training set".into()));
    }
    if dev.is_empty() {
        return Err(Error::Contract(
            "need a nonempty dev set for model selection".into(),
        ));
    }

    let mut params = params;
    let mut rng = Rng::new(options.seed);
    let mut state = AdamState::new(&params, options.adam);
    let mut history = Vec::with_capacity(options.epochs);
    let mut best: Option<(f64, usize, ModelParams<f32>)> = None;

    for epoch in 1..=options.epochs {
        let batches = batch_iter(train, options.batch_size, config.t_max, &mut rng, true)?;
        let mut loss_sum = 0.0;
        for (batch_index, batch) in batches.iter().enumerate() {
            // The tape refuses to record non-finite values, so a numeric
            // blow-up surfaces here; stamp it with its coordinates.
            loss_sum += train_batch(&mut params, &mut state, batch, config, &mut rng)
                .map_err(|e| match e {
                    Error::Numeric(msg) => {
                        Error::Numeric(format!("{msg} (epoch {epoch}, batch {batch_index})"))
                    }
                    other => other,
                })?;
        }

        let report = evaluate(dev, &params, config, true)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            dev_accuracy: report.accuracy,
            dev_macro_f1: report.macro_f1,
        };
        progress(&record);

        let improved = best
            .as_ref()
            .is_none_or(|(acc, _, _)| record.dev_accuracy > *acc);
        if improved {
            best = Some((record.dev_accuracy, epoch, params.clone()));
        }
        history.push(record);
    }

    let (best_epoch, best_params) = match best {
        Some((_, epoch, p)) => (epoch, p),
        None => (0, params.clone()),
    };
    Ok(FitResult {
        params,
        best_params,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-class toy set: class 0 sentences contain token 2 as the aspect,
    /// class 1 sentences token 3, plus shared filler tokens 4..=9.
    fn planted_examples(per_class: usize, seed: u64) -> Vec<Example> {
        let mut rng = Rng::new(seed);
        let mut examples = Vec::new();
        for c in 0..2 {
            for _ in 0..per_class {
                let n = 3 + rng.below(4);
                let mut token_ids: Vec<usize> = (0..n).map(|_| 4 + rng.below(6)).collect();
                let k = rng.below(n);
                token_ids[k] = 2 + c;
                examples.push(Example {
                    aspect_token_ids: vec![token_ids[k]],
                    token_ids,
                    aspect_first_index: k + 1,
                    label: c,
                });
            }
        }
        examples
    }

    fn toy_setup(seed: u64) -> (ModelConfig, ModelParams<f32>) {
        let config = ModelConfig::toy();
        let mut rng = Rng::new(seed);
        let mut data: Vec<f32> = (0..10 * config.d_x)
            .map(|_| rng.uniform(-0.5, 0.5) as f32)
            .collect();
        // The PAD row starts zero, as the optimizer keeps it.
        data[..config.d_x].fill(0.0);
        let embed = Tensor::new(vec![10, config.d_x], data).unwrap();
        let params = ModelParams::init(&config, embed, &mut rng).unwrap();
        (config, params)
    }

    fn bits(params: &ModelParams<f32>) -> Vec<Vec<u32>> {
        params
            .entries()
            .iter()
            .map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect())
            .collect()
    }

    #[test]
    fn zero_learning_rate_changes_nothing_and_ties_keep_the_first_epoch() {
        let (config, params) = toy_setup(31);
        let examples = planted_examples(3, 1);
        let options = FitOptions {
            epochs: 3,
            batch_size: 2,
            adam: AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
            seed: 7,
        };
        let before = bits(&params);
        let result = fit(&examples, &examples, &config, params, &options, |_| {}).unwrap();
        assert_eq!(bits(&result.params), before);
        assert_eq!(bits(&result.best_params), before);
        assert_eq!(result.history.len(), 3);
        // Frozen parameters give the same dev accuracy every epoch; the
        // tie must resolve to the earliest one.
        assert_eq!(result.best_epoch, 1);
    }

    #[test]
    fn same_seed_reproduces_the_run_bit_for_bit() {
        let (config, params) = toy_setup(32);
        let examples = planted_examples(3, 2);
        let options = FitOptions {
            epochs: 4,
            batch_size: 2,
            adam: AdamConfig::default(),
            seed: 11,
        };
        let a = fit(&examples, &examples, &config, params.clone(), &options, |_| {}).unwrap();
        let b = fit(&examples, &examples, &config, params, &options, |_| {}).unwrap();
        assert_eq!(bits(&a.params), bits(&b.params));
        for (ra, rb) in a.history.iter().zip(&b.history) {
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
            assert_eq!(ra.dev_accuracy, rb.dev_accuracy);
            assert_eq!(ra.dev_macro_f1, rb.dev_macro_f1);
        }
    }

    #[test]
    fn overfits_twenty_planted_examples() {
        let (config, params) = toy_setup(33);
        let examples = planted_examples(10, 3);
        assert_eq!(examples.len(), 20);
        let options = FitOptions {
            epochs: 200,
            batch_size: 4,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            seed: 13,
        };
        let result = fit(&examples, &examples, &config, params, &options, |_| {}).unwrap();
        let best = result
            .history
            .iter()
            .map(|r| r.dev_accuracy)
            .fold(0.0, f64::max);
        assert_eq!(best, 1.0, "never reached 100% train accuracy");
    }

    #[test]
    fn nan_loss_aborts_with_coordinates() {
        let (config, mut params) = toy_setup(34);
        params.conv_w.data_mut()[0] = f32::NAN;
        let examples = planted_examples(2, 4);
        let options = FitOptions {
            epochs: 1,
            batch_size: 8,
            adam: AdamConfig::default(),
            seed: 17,
        };
        match fit(&examples, &examples, &config, params, &options, |_| {}) {
            Err(Error::Numeric(msg)) => {
                assert!(msg.contains("epoch 1") && msg.contains("batch 0"), "{msg}");
            }
            other => panic!("expected a numeric error, got {other:?}"),
        }
    }

    #[test]
    fn empty_sets_are_rejected() {
        let (config, params) = toy_setup(35);
        let examples = planted_examples(1, 5);
        let options = FitOptions::default();
        assert!(fit(&[], &examples, &config, params.clone(), &options, |_| {}).is_err());
        assert!(fit(&examples, &[], &config, params, &options, |_| {}).is_err());
    }

    #[test]
    fn progress_sees_every_epoch_in_order() {
        let (config, params) = toy_setup(36);
        let examples = planted_examples(2, 6);
        let options = FitOptions {
            epochs: 3,
            batch_size: 4,
            adam: AdamConfig::default(),
            seed: 19,
        };
        let mut seen = Vec::new();
        let result = fit(&examples, &examples, &config, params, &options, |r| {
            seen.push(r.epoch);
        })
        .unwrap();
        assert_eq!(seen, vec![1, 2, 3]);
        assert_eq!(
            result.history.iter().map(|r| r.epoch).collect::<Vec<_>>(),
            seen
        );
    }
}

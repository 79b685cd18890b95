//! Polarity prediction, aspect-term detection by de-capsulizing sentiment
//! capsules, and the classification/detection metrics.

use crate::data::{AspectAnnotation, Example, Token};
use crate::error::{Error, Result};
use crate::model::{self, ModelConfig, ModelParams};
use crate::rng::Rng;
use crate::tape::{GradTape, NORM_GUARD};
use crate::tensor::Element;

/// Index of the largest entry; exact ties go to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Assigns the polarity of the longest sentiment capsule. Dropout is
/// disabled, so the pass consumes no randomness.
pub fn predict<E: Element>(
    example: &Example,
    params: &ModelParams<E>,
    config: &ModelConfig,
    use_proximity: bool,
) -> Result<usize> {
    let mut tape: GradTape<E> = GradTape::new();
    let bound = params.bind(&mut tape);
    let mut rng = Rng::new(0);
    let trace = model::forward(&mut tape, &bound, example, config, &mut rng, false, use_proximity)?;
    let v_prob: Vec<f64> = tape
        .value(trace.v_prob)
        .data()
        .iter()
        .map(|&v| v.to_f64())
        .collect();
    Ok(argmax_lowest(&v_prob))
}

/// Per-class precision/recall/F1 with the 0/0 := 0 convention.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of gold instances of this class.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassStats>,
}

/// Accuracy, per-class stats, and macro-F1 (unweighted mean over all
/// `classes`, counting classes absent from gold and predictions as 0).
pub fn classification_metrics(
    gold: &[usize],
    predicted: &[usize],
    classes: usize,
) -> Result<ClassificationReport> {
    if gold.is_empty() || gold.len() != predicted.len() {
        return Err(Error::Contract(format!(
            "need equal-length nonempty label lists, got {} gold and {} predicted",
            gold.len(),
            predicted.len()
        )));
    }
    if let Some(&bad) = gold.iter().chain(predicted).find(|&&l| l >= classes) {
        return Err(Error::Contract(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }

    let correct = gold
        .iter()
        .zip(predicted)
        .filter(|(g, p)| g == p)
        .count();
    let accuracy = correct as f64 / gold.len() as f64;

    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let tp = gold
            .iter()
            .zip(predicted)
            .filter(|&(&g, &p)| g == c && p == c)
            .count();
        let pred_c = predicted.iter().filter(|&&p| p == c).count();
        let gold_c = gold.iter().filter(|&&g| g == c).count();
        let precision = ratio(tp, pred_c);
        let recall = ratio(tp, gold_c);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassStats {
            precision,
            recall,
            f1,
            support: gold_c,
        });
    }
    let macro_f1 = per_class.iter().map(|s| s.f1).sum::<f64>() / classes as f64;

    Ok(ClassificationReport {
        accuracy,
        macro_f1,
        per_class,
    })
}

/// Predicts every example and scores against its gold label.
pub fn evaluate<E: Element>(
    examples: &[Example],
    params: &ModelParams<E>,
    config: &ModelConfig,
    use_proximity: bool,
) -> Result<ClassificationReport> {
    let mut gold = Vec::with_capacity(examples.len());
    let mut pred = Vec::with_capacity(examples.len());
    for example in examples {
        gold.push(example.label);
        pred.push(predict(example, params, config, use_proximity)?);
    }
    classification_metrics(&gold, &pred, config.sentiment_count)
}

/// One scored token position in a detection ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct WordScore {
    pub position: usize,
    pub token_id: usize,
    pub score: f64,
}

/// One active sentiment capsule's ranked word list.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub class: usize,
    pub length: f64,
    /// True when no capsule cleared the threshold and the longest one was
    /// evaluated instead.
    pub fallback: bool,
    /// All unpadded positions, sorted by descending cosine score, ties by
    /// earlier position.
    pub word_scores: Vec<WordScore>,
}

/// Classes whose capsule length exceeds `threshold`; falls back to the
/// single longest capsule (lowest index on ties) when none do.
pub fn active_capsules(v_prob: &[f64], threshold: f64) -> (Vec<usize>, bool) {
    let active: Vec<usize> = (0..v_prob.len())
        .filter(|&c| v_prob[c] > threshold)
        .collect();
    if active.is_empty() {
        (vec![argmax_lowest(v_prob)], true)
    } else {
        (active, false)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < NORM_GUARD || nb < NORM_GUARD {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// De-capsulizes a sentence without aspect input: runs the network with
/// proximity disabled, picks the active sentiment capsules, reconstructs
/// each one under its own one-hot mask, and ranks every token by cosine
/// similarity between the reconstruction and the token's embedding row.
pub fn detect_aspects<E: Element>(
    token_ids: &[usize],
    params: &ModelParams<E>,
    config: &ModelConfig,
    threshold: f64,
) -> Result<Vec<DetectionResult>> {
    if token_ids.is_empty() {
        return Err(Error::Contract(
            "cannot detect aspects in an empty sentence".into(),
        ));
    }
    let probe = Example {
        token_ids: token_ids.to_vec(),
        aspect_first_index: 1,
        aspect_token_ids: vec![token_ids[0]],
        label: 0,
    };

    let mut tape: GradTape<E> = GradTape::new();
    let bound = params.bind(&mut tape);
    let mut rng = Rng::new(0);
    let trace = model::forward(&mut tape, &bound, &probe, config, &mut rng, false, false)?;
    let v_prob: Vec<f64> = tape
        .value(trace.v_prob)
        .data()
        .iter()
        .map(|&v| v.to_f64())
        .collect();
    let (active, fallback) = active_capsules(&v_prob, threshold);

    let d = config.d_x;
    let embed = params.embed.data();
    let mut results = Vec::with_capacity(active.len());
    for class in active {
        let mut mask = vec![0.0; config.sentiment_count];
        mask[class] = 1.0;
        let (v_recon, _) = model::reconstruct(&mut tape, trace.sentiment, &mask, &bound)?;
        let recon: Vec<f64> = tape
            .value(v_recon)
            .data()
            .iter()
            .map(|&v| v.to_f64())
            .collect();

        let mut word_scores: Vec<WordScore> = token_ids
            .iter()
            .enumerate()
            .map(|(position, &token_id)| {
                let row: Vec<f64> = embed[token_id * d..(token_id + 1) * d]
                    .iter()
                    .map(|&v| v.to_f64())
                    .collect();
                WordScore {
                    position,
                    token_id,
                    score: cosine(&recon, &row),
                }
            })
            .collect();
        word_scores.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("cosine scores are finite")
                .then(a.position.cmp(&b.position))
        });

        results.push(DetectionResult {
            class,
            length: v_prob[class],
            fallback,
            word_scores,
        });
    }
    Ok(results)
}

/// One evaluation unit: an active capsule's ranking against the gold
/// aspect positions for that sentiment in that sentence.
#[derive(Debug, Clone)]
pub struct DetectionUnit {
    /// Token positions in ranked order (best first).
    pub ranked: Vec<usize>,
    /// Gold aspect-word positions.
    pub gold: Vec<usize>,
}

/// Pairs each detection result with the positions of the sentence's gold
/// aspect words of the same polarity. A capsule whose class has no gold
/// aspect gets an empty gold set (and is then skipped by
/// [`detection_metrics`]). Only the first `kept` tokens count — positions
/// beyond the truncation point can never be ranked.
pub fn units_for_sentence(
    tokens: &[Token],
    kept: usize,
    aspects: &[AspectAnnotation],
    results: &[DetectionResult],
) -> Vec<DetectionUnit> {
    results
        .iter()
        .map(|result| {
            let gold: Vec<usize> = tokens
                .iter()
                .take(kept)
                .enumerate()
                .filter(|(_, token)| {
                    aspects.iter().any(|a| {
                        a.polarity.label() == Some(result.class)
                            && token.start < a.to
                            && a.from < token.end
                    })
                })
                .map(|(position, _)| position)
                .collect();
            DetectionUnit {
                ranked: result.word_scores.iter().map(|w| w.position).collect(),
                gold,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub p_at_1: f64,
    pub r_at_5: f64,
    pub map: f64,
    /// Units actually scored (empty-gold units are excluded).
    pub units: usize,
}

fn average_precision(ranked: &[usize], gold: &[usize]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (idx, position) in ranked.iter().enumerate() {
        if gold.contains(position) {
            hits += 1;
            sum += hits as f64 / (idx + 1) as f64;
        }
    }
    sum / gold.len() as f64
}

/// Ranking metrics over (sentence, active capsule) units: P@1, R@5, and
/// mean average precision. Units with empty gold sets are skipped.
pub fn detection_metrics(units: &[DetectionUnit]) -> Result<DetectionReport> {
    let scored: Vec<&DetectionUnit> = units.iter().filter(|u| !u.gold.is_empty()).collect();
    if scored.is_empty() {
        return Err(Error::Contract(
            "no detection units with gold aspects to score".into(),
        ));
    }
    let mut p1 = 0.0;
    let mut r5 = 0.0;
    let mut ap = 0.0;
    for unit in &scored {
        if unit.ranked.first().is_some_and(|p| unit.gold.contains(p)) {
            p1 += 1.0;
        }
        let top5_hits = unit
            .ranked
            .iter()
            .take(5)
            .filter(|p| unit.gold.contains(p))
            .count();
        r5 += top5_hits as f64 / unit.gold.len() as f64;
        ap += average_precision(&unit.ranked, &unit.gold);
    }
    let n = scored.len() as f64;
    Ok(DetectionReport {
        p_at_1: p1 / n,
        r_at_5: r5 / n,
        map: ap / n,
        units: scored.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    #[test]
    fn argmax_picks_largest_and_breaks_ties_low() {
        assert_eq!(argmax_lowest(&[0.2, 0.7, 0.3]), 1);
        assert_eq!(argmax_lowest(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax_lowest(&[0.1]), 0);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let report = classification_metrics(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.macro_f1, 1.0);
        for stats in &report.per_class {
            assert_eq!(stats.f1, 1.0);
        }
    }

    #[test]
    fn classification_hand_example() {
        let report = classification_metrics(&[0, 0, 1, 2], &[0, 1, 1, 2], 3).unwrap();
        assert_eq!(report.accuracy, 0.75);
        let c0 = &report.per_class[0];
        assert_eq!((c0.precision, c0.recall), (1.0, 0.5));
        assert!((c0.f1 - 2.0 / 3.0).abs() < 1e-12);
        let c1 = &report.per_class[1];
        assert_eq!((c1.precision, c1.recall), (0.5, 1.0));
        assert!((c1.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.per_class[2].f1, 1.0);
        assert!((report.macro_f1 - 7.0 / 9.0).abs() < 1e-12);
        assert_eq!(report.per_class[0].support, 2);
    }

    #[test]
    fn collapsed_predictions_leave_other_classes_at_zero() {
        let report = classification_metrics(&[0, 1, 2, 2], &[1, 1, 1, 1], 3).unwrap();
        assert!(report.per_class[1].f1 > 0.0);
        assert_eq!(report.per_class[0].f1, 0.0);
        assert_eq!(report.per_class[2].f1, 0.0);
    }

    #[test]
    fn two_class_balanced_perfect_macro_equals_accuracy() {
        let report = classification_metrics(&[0, 1, 0, 1], &[0, 1, 0, 1], 2).unwrap();
        assert_eq!(report.macro_f1, report.accuracy);
    }

    #[test]
    fn bad_label_lists_are_contract_violations() {
        assert!(classification_metrics(&[], &[], 3).is_err());
        assert!(classification_metrics(&[0, 1], &[0], 3).is_err());
        assert!(classification_metrics(&[0, 3], &[0, 1], 3).is_err());
    }

    #[test]
    fn thresholding_and_fallback() {
        assert_eq!(active_capsules(&[0.9, 0.3, 0.7], 0.5), (vec![0, 2], false));
        assert_eq!(active_capsules(&[0.2, 0.3, 0.4], 0.5), (vec![2], true));
        assert_eq!(active_capsules(&[0.4, 0.4, 0.1], 0.5), (vec![0], true));
    }

    #[test]
    fn cosine_extremes_and_range() {
        assert!((cosine(&[1.0, 0.0], &[3.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!((cosine(&[1.0, 0.0], &[-2.0, 0.0]) + 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 5.0]), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
        let mut rng = Rng::new(9);
        for _ in 0..100 {
            let a: Vec<f64> = (0..4).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let c = cosine(&a, &b);
            assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
        }
    }

    fn toy_model(seed: u64) -> (ModelConfig, ModelParams<f64>) {
        let config = ModelConfig::toy();
        let mut rng = Rng::new(seed);
        let data: Vec<f64> = (0..10 * config.d_x).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let embed = Tensor::new(vec![10, config.d_x], data).unwrap();
        let params = ModelParams::init(&config, embed, &mut rng).unwrap();
        (config, params)
    }

    fn toy_example() -> Example {
        Example {
            token_ids: vec![2, 3, 4, 5],
            aspect_first_index: 2,
            aspect_token_ids: vec![3],
            label: 0,
        }
    }

    #[test]
    fn predict_is_deterministic_and_in_range() {
        let (config, params) = toy_model(51);
        let a = predict(&toy_example(), &params, &config, true).unwrap();
        let b = predict(&toy_example(), &params, &config, true).unwrap();
        assert_eq!(a, b);
        assert!(a < config.sentiment_count);
    }

    #[test]
    fn prediction_agrees_between_fresh_and_shared_tapes() {
        // Evaluating an example alone or alongside others on one tape must
        // produce bitwise-identical capsule lengths.
        let (config, params) = toy_model(52);
        let example = toy_example();

        let mut solo_tape: GradTape<f64> = GradTape::new();
        let bound = params.bind(&mut solo_tape);
        let mut rng = Rng::new(0);
        let solo =
            model::forward(&mut solo_tape, &bound, &example, &config, &mut rng, false, true)
                .unwrap();

        let mut shared_tape: GradTape<f64> = GradTape::new();
        let bound = params.bind(&mut shared_tape);
        let other = Example {
            token_ids: vec![7, 8],
            aspect_first_index: 1,
            aspect_token_ids: vec![7],
            label: 2,
        };
        let mut rng = Rng::new(0);
        model::forward(&mut shared_tape, &bound, &other, &config, &mut rng, false, true).unwrap();
        let shared =
            model::forward(&mut shared_tape, &bound, &example, &config, &mut rng, false, true)
                .unwrap();

        assert_eq!(
            solo_tape.value(solo.v_prob).data(),
            shared_tape.value(shared.v_prob).data()
        );
    }

    #[test]
    fn detection_covers_every_position_once() {
        let (config, params) = toy_model(53);
        let results = detect_aspects(&[2, 3, 4, 5, 6], &params, &config, 0.5).unwrap();
        assert!(!results.is_empty() && results.len() <= config.sentiment_count);
        for r in &results {
            assert!((0.0..1.0).contains(&r.length));
            let mut positions: Vec<usize> = r.word_scores.iter().map(|w| w.position).collect();
            positions.sort_unstable();
            assert_eq!(positions, vec![0, 1, 2, 3, 4]);
            for w in &r.word_scores {
                assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&w.score));
            }
        }
    }

    #[test]
    fn tied_scores_rank_the_earlier_position_first() {
        // Token 2 appears twice, so positions 0 and 1 score identically
        // and position 0 must come first.
        let (config, params) = toy_model(54);
        let results = detect_aspects(&[2, 2, 3], &params, &config, 0.5).unwrap();
        for r in &results {
            let p0 = r.word_scores.iter().position(|w| w.position == 0).unwrap();
            let p1 = r.word_scores.iter().position(|w| w.position == 1).unwrap();
            assert_eq!(
                r.word_scores[p0].score, r.word_scores[p1].score,
                "same token must score the same"
            );
            assert!(p0 < p1);
        }
    }

    #[test]
    fn empty_sentence_detection_is_a_contract_violation() {
        let (config, params) = toy_model(55);
        assert!(matches!(
            detect_aspects(&[], &params, &config, 0.5),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn gold_positions_split_by_polarity_class() {
        use crate::data::{tokenize, Polarity};
        let tokens = tokenize("great battery awful service");
        let aspects = vec![
            AspectAnnotation {
                term: "battery".into(),
                polarity: Polarity::Positive,
                from: 6,
                to: 13,
            },
            AspectAnnotation {
                term: "service".into(),
                polarity: Polarity::Negative,
                from: 20,
                to: 27,
            },
        ];
        let result_for = |class| DetectionResult {
            class,
            length: 0.8,
            fallback: false,
            word_scores: (0..4)
                .map(|p| WordScore {
                    position: p,
                    token_id: 2 + p,
                    score: 0.0,
                })
                .collect(),
        };
        let results = [result_for(0), result_for(1), result_for(2)];
        let units = units_for_sentence(&tokens, 4, &aspects, &results);
        assert_eq!(units[0].gold, vec![3], "negative gold is \"service\"");
        assert!(units[1].gold.is_empty(), "no neutral aspect");
        assert_eq!(units[2].gold, vec![1], "positive gold is \"battery\"");
        assert_eq!(units[0].ranked, vec![0, 1, 2, 3]);

        // Truncation hides positions at and beyond the cut.
        let truncated = units_for_sentence(&tokens, 2, &aspects, &results[..1]);
        assert!(truncated[0].gold.is_empty());
    }

    #[test]
    fn multiword_aspects_cover_every_overlapping_token() {
        use crate::data::{tokenize, Polarity};
        let tokens = tokenize("the battery life rocks");
        let aspects = vec![AspectAnnotation {
            term: "battery life".into(),
            polarity: Polarity::Positive,
            from: 4,
            to: 16,
        }];
        let result = DetectionResult {
            class: 2,
            length: 0.9,
            fallback: false,
            word_scores: (0..4)
                .map(|p| WordScore {
                    position: p,
                    token_id: 2 + p,
                    score: 0.0,
                })
                .collect(),
        };
        let units = units_for_sentence(&tokens, 4, &aspects, &[result]);
        assert_eq!(units[0].gold, vec![1, 2]);
    }

    #[test]
    fn detection_metric_hand_examples() {
        // Gold {2} ranked first: everything is 1.
        let unit = DetectionUnit {
            ranked: vec![2, 0, 1],
            gold: vec![2],
        };
        let report = detection_metrics(&[unit]).unwrap();
        assert_eq!((report.p_at_1, report.map), (1.0, 1.0));

        // Gold {2, 5} at ranks 1 and 3 → AP = (1/1 + 2/3)/2.
        let unit = DetectionUnit {
            ranked: vec![2, 0, 5, 1, 4],
            gold: vec![2, 5],
        };
        let report = detection_metrics(&[unit]).unwrap();
        assert!((report.map - 5.0 / 6.0).abs() < 1e-12);
        assert!((report.map - 0.8333).abs() < 1e-4);
        assert_eq!(report.r_at_5, 1.0);
    }

    #[test]
    fn empty_gold_units_are_excluded() {
        let scored = DetectionUnit {
            ranked: vec![0, 1],
            gold: vec![1],
        };
        let empty = DetectionUnit {
            ranked: vec![0, 1],
            gold: vec![],
        };
        let report = detection_metrics(&[empty.clone(), scored]).unwrap();
        assert_eq!(report.units, 1);
        assert!(detection_metrics(&[empty]).is_err());
    }

    #[test]
    fn average_precision_matches_the_definition_on_random_rankings() {
        // Independent oracle: precision at each gold item's rank, averaged
        // over gold items (rank order keeps the summation order identical).
        let mut rng = Rng::new(77);
        for _ in 0..50 {
            let n = 3 + rng.below(8);
            let mut ranked: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut ranked);
            let gold_count = 1 + rng.below(n - 1);
            let mut pool: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut pool);
            let gold: Vec<usize> = pool[..gold_count].to_vec();

            let mut oracle_terms: Vec<(usize, f64)> = gold
                .iter()
                .map(|g| {
                    let rank = ranked.iter().position(|p| p == g).unwrap() + 1;
                    let in_prefix = ranked[..rank].iter().filter(|p| gold.contains(p)).count();
                    (rank, in_prefix as f64 / rank as f64)
                })
                .collect();
            oracle_terms.sort_by_key(|&(rank, _)| rank);
            let oracle: f64 =
                oracle_terms.iter().map(|&(_, p)| p).sum::<f64>() / gold.len() as f64;

            assert_eq!(average_precision(&ranked, &gold), oracle);
        }
    }

    #[test]
    fn recall_grows_with_k() {
        let mut rng = Rng::new(78);
        for _ in 0..20 {
            let n = 10;
            let mut ranked: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut ranked);
            let gold = [0, 3, 7];
            let recall_at = |k: usize| {
                ranked
                    .iter()
                    .take(k)
                    .filter(|p| gold.contains(p))
                    .count() as f64
                    / gold.len() as f64
            };
            for k in 1..n {
                assert!(recall_at(k + 1) >= recall_at(k));
            }
        }
    }
}

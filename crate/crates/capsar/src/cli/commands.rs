//! The four operations behind the command-line binary: train a model from
//! a run config, evaluate a checkpoint, detect aspect terms, and verify
//! the gradients against finite differences.
//!
//! Diagnostics and progress go to stderr; results go to stdout or to the
//! files named by the caller, so output stays machine-readable under
//! redirection.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::cli::config::{DataFormat, RunConfig};
use crate::data::embeddings::{load_embeddings, EmbeddingTable};
use crate::data::semeval::parse_semeval_xml;
use crate::data::tsv::parse_tsv;
use crate::data::{tokenize, to_examples, Example, RawSentence, Vocabulary, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::eval::{detect_aspects, detection_metrics, evaluate, units_for_sentence};
use crate::gradcheck::check_model_gradients;
use crate::model::{ModelConfig, ModelParams};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{fit, load_checkpoint, save_checkpoint, AdamConfig, Checkpoint, FitOptions};

/// Parses one corpus file in the given format, naming the path on failure.
pub fn load_sentences(path: &Path, format: DataFormat) -> Result<Vec<RawSentence>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    match format {
        DataFormat::Xml => parse_semeval_xml(&text),
        DataFormat::Tsv => parse_tsv(&text),
    }
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path)
        .map_err(|e| Error::Config(format!("cannot open checkpoint {}: {e}", path.display())))?;
    load_checkpoint(BufReader::new(file))
}

fn write_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", path.display())))?;
    save_checkpoint(checkpoint, BufWriter::new(file))
}

/// Class display name: the conventional sentiment names when there are
/// exactly three classes, plain indices otherwise.
fn class_name(class: usize, count: usize) -> String {
    if count == CLASS_NAMES.len() {
        CLASS_NAMES[class].to_string()
    } else {
        format!("class-{class}")
    }
}

/// Quotes a CSV field when it contains a delimiter, quote, or newline.
fn csv_field(value: &str) -> String {
    if value.contains([',', '"', '\n']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

/// Trains a model as described by the run config and writes three
/// artifacts into the output directory: `best.cpsr` (highest dev
/// accuracy), `final.cpsr` (last epoch), and `history.csv` (one row per
/// epoch). Missing embeddings are not fatal: the table is randomly
/// initialized and a warning goes to stderr.
pub fn cmd_train(config: &RunConfig) -> Result<()> {
    config.model.validate()?;
    let train_path = config
        .train
        .as_deref()
        .ok_or_else(|| Error::Config("config has no train path".into()))?;
    let sentences = load_sentences(train_path, config.format)?;
    let vocab = Vocabulary::build(&sentences);
    let mut rng = Rng::new(config.seed);

    let table = match &config.embeddings {
        Some(path) => match fs::read_to_string(path) {
            Ok(text) => {
                let (table, coverage) = load_embeddings(&text, &vocab, config.model.d_x, &mut rng)?;
                eprintln!(
                    "embeddings: {}/{} vocabulary words covered, {} duplicate file entries",
                    coverage.covered, coverage.total, coverage.duplicates
                );
                table
            }
            Err(e) => {
                eprintln!(
                    "warning: cannot read embeddings {}: {e}; using random initialization",
                    path.display()
                );
                EmbeddingTable::random(vocab.len(), config.model.d_x, &mut rng)
            }
        },
        None => {
            eprintln!("no embeddings configured; using random initialization");
            EmbeddingTable::random(vocab.len(), config.model.d_x, &mut rng)
        }
    };

    let train_set = to_examples(&sentences, &vocab, config.model.t_max)?;
    if train_set.skipped_truncated > 0 {
        eprintln!(
            "warning: skipped {} aspects falling entirely beyond t_max = {}",
            train_set.skipped_truncated, config.model.t_max
        );
    }
    if train_set.examples.is_empty() {
        return Err(Error::Config(format!(
            "no usable training examples in {}",
            train_path.display()
        )));
    }

    let dev_examples: Vec<Example> = match &config.dev {
        Some(path) => {
            let dev_sentences = load_sentences(path, config.format)?;
            let dev_set = to_examples(&dev_sentences, &vocab, config.model.t_max)?;
            if dev_set.examples.is_empty() {
                return Err(Error::Config(format!(
                    "no usable dev examples in {}",
                    path.display()
                )));
            }
            dev_set.examples
        }
        None => {
            eprintln!("no dev set configured; tracking accuracy on the training set");
            train_set.examples.clone()
        }
    };

    let params = ModelParams::init(&config.model, table.into_tensor(), &mut rng)?;
    let options = FitOptions {
        epochs: config.epochs,
        batch_size: config.batch_size,
        adam: AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
        seed: config.seed,
    };
    let result = fit(
        &train_set.examples,
        &dev_examples,
        &config.model,
        params,
        &options,
        |record| {
            eprintln!(
                "epoch {:>3}/{}: train loss {:.6}, dev accuracy {:.4}, dev macro-F1 {:.4}",
                record.epoch,
                config.epochs,
                record.train_loss,
                record.dev_accuracy,
                record.dev_macro_f1
            );
        },
    )?;

    fs::create_dir_all(&config.out).map_err(|e| {
        Error::Config(format!(
            "cannot create output directory {}: {e}",
            config.out.display()
        ))
    })?;
    let history_path = config.out.join("history.csv");
    let mut csv = String::from("epoch,train_loss,dev_accuracy,dev_macro_f1\n");
    for record in &result.history {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            record.epoch, record.train_loss, record.dev_accuracy, record.dev_macro_f1
        ));
    }
    fs::write(&history_path, csv)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", history_path.display())))?;

    let best_path = config.out.join("best.cpsr");
    write_checkpoint(
        &Checkpoint {
            config: config.model.clone(),
            vocab: vocab.clone(),
            params: result.best_params,
            seed: config.seed,
            epoch: result.best_epoch as u64,
        },
        &best_path,
    )?;
    let final_path = config.out.join("final.cpsr");
    write_checkpoint(
        &Checkpoint {
            config: config.model.clone(),
            vocab,
            params: result.params,
            seed: config.seed,
            epoch: config.epochs as u64,
        },
        &final_path,
    )?;

    let best_accuracy = result
        .history
        .iter()
        .find(|r| r.epoch == result.best_epoch)
        .map_or(f64::NAN, |r| r.dev_accuracy);
    println!(
        "trained {} epochs on {} examples ({} dev)",
        config.epochs,
        train_set.examples.len(),
        dev_examples.len()
    );
    println!(
        "best epoch {} with dev accuracy {:.4}",
        result.best_epoch, best_accuracy
    );
    println!(
        "wrote {}, {}, {}",
        best_path.display(),
        final_path.display(),
        history_path.display()
    );
    Ok(())
}

/// Evaluates a checkpoint on a corpus: prints an aligned text report to
/// stdout and writes the same numbers as `metric,class,value` CSV.
pub fn cmd_eval(model: &Path, data: &Path, format: DataFormat, csv_out: &Path) -> Result<()> {
    let checkpoint = read_checkpoint(model)?;
    let sentences = load_sentences(data, format)?;
    let set = to_examples(&sentences, &checkpoint.vocab, checkpoint.config.t_max)?;
    if set.examples.is_empty() {
        return Err(Error::Config(format!(
            "no usable evaluation examples in {}",
            data.display()
        )));
    }
    let report = evaluate(&set.examples, &checkpoint.params, &checkpoint.config, true)?;
    let count = checkpoint.config.sentiment_count;

    println!("examples    {}", set.examples.len());
    println!("accuracy    {:.4}", report.accuracy);
    println!("macro-F1    {:.4}", report.macro_f1);
    println!();
    println!(
        "{:<12}{:<12}{:<12}{:<12}support",
        "class", "precision", "recall", "f1"
    );
    for (class, stats) in report.per_class.iter().enumerate() {
        println!(
            "{:<12}{:<12.4}{:<12.4}{:<12.4}{}",
            class_name(class, count),
            stats.precision,
            stats.recall,
            stats.f1,
            stats.support
        );
    }

    let mut csv = String::from("metric,class,value\n");
    csv.push_str(&format!("accuracy,,{}\n", report.accuracy));
    csv.push_str(&format!("macro_f1,,{}\n", report.macro_f1));
    for (class, stats) in report.per_class.iter().enumerate() {
        let name = class_name(class, count);
        csv.push_str(&format!("precision,{name},{}\n", stats.precision));
        csv.push_str(&format!("recall,{name},{}\n", stats.recall));
        csv.push_str(&format!("f1,{name},{}\n", stats.f1));
        csv.push_str(&format!("support,{name},{}\n", stats.support));
    }
    fs::write(csv_out, csv)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", csv_out.display())))?;
    eprintln!("wrote {}", csv_out.display());
    Ok(())
}

/// Runs aspect-term detection over a corpus: for every sentence, prints
/// each active sentiment capsule with its top-scored words. When the
/// corpus carries gold aspect annotations, also prints P@1 / R@5 / mAP.
/// The optional heatmap CSV holds one block per sentence: a header row of
/// tokens, then one row of cosine scores per active capsule.
pub fn cmd_detect(
    model: &Path,
    data: &Path,
    format: DataFormat,
    threshold: f64,
    top_k: usize,
    heatmap: Option<&Path>,
) -> Result<()> {
    let checkpoint = read_checkpoint(model)?;
    let sentences = load_sentences(data, format)?;
    let count = checkpoint.config.sentiment_count;
    let mut all_units = Vec::new();
    let mut heatmap_csv = String::new();

    for sentence in &sentences {
        let tokens = tokenize(&sentence.text);
        let kept = tokens.len().min(checkpoint.config.t_max);
        if kept == 0 {
            eprintln!("warning: sentence {} has no tokens; skipped", sentence.id);
            continue;
        }
        let ids: Vec<usize> = tokens[..kept]
            .iter()
            .map(|t| checkpoint.vocab.id(&t.text))
            .collect();
        let results = detect_aspects(&ids, &checkpoint.params, &checkpoint.config, threshold)?;

        println!("sentence {}: {}", sentence.id, sentence.text);
        for result in &results {
            let marker = if result.fallback { ", fallback" } else { "" };
            let words: Vec<String> = result
                .word_scores
                .iter()
                .take(top_k)
                .map(|w| format!("{} {:.4}", tokens[w.position].text, w.score))
                .collect();
            println!(
                "  {} (length {:.4}{marker}): {}",
                class_name(result.class, count),
                result.length,
                words.join(", ")
            );
        }

        if heatmap.is_some() {
            let mut header = format!("sentence,{}", csv_field(&sentence.id));
            for token in &tokens[..kept] {
                header.push(',');
                header.push_str(&csv_field(&token.text));
            }
            heatmap_csv.push_str(&header);
            heatmap_csv.push('\n');
            for result in &results {
                let mut row = vec![0.0; kept];
                for w in &result.word_scores {
                    row[w.position] = w.score;
                }
                heatmap_csv.push_str(&class_name(result.class, count));
                heatmap_csv.push(',');
                if result.fallback {
                    heatmap_csv.push_str("fallback");
                } else {
                    heatmap_csv.push_str("active");
                }
                for score in row {
                    heatmap_csv.push_str(&format!(",{score}"));
                }
                heatmap_csv.push('\n');
            }
        }

        all_units.extend(units_for_sentence(
            &tokens,
            kept,
            &sentence.aspects,
            &results,
        ));
    }

    if all_units.iter().any(|u| !u.gold.is_empty()) {
        let metrics = detection_metrics(&all_units)?;
        println!();
        println!(
            "detection over {} units: P@1 {:.4}, R@5 {:.4}, mAP {:.4}",
            metrics.units, metrics.p_at_1, metrics.r_at_5, metrics.map
        );
    }
    if let Some(path) = heatmap {
        fs::write(path, heatmap_csv)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

/// Sweeps every parameter coordinate of a miniature model and compares
/// the tape gradients against central finite differences in f64. Prints
/// the worst relative error per parameter and overall; returns whether
/// the worst error stays below 1e-4.
pub fn cmd_gradcheck() -> Result<bool> {
    let config = ModelConfig::toy();
    let mut rng = Rng::new(0xC0FFEE);
    let vocab_len = 10;
    let embed = Tensor::new(
        vec![vocab_len, config.d_x],
        (0..vocab_len * config.d_x)
            .map(|_| rng.uniform(-0.5, 0.5))
            .collect(),
    )?;
    let params = ModelParams::<f64>::init(&config, embed, &mut rng)?;
    let example = Example {
        token_ids: vec![2, 3, 4, 5, 6],
        aspect_first_index: 2,
        aspect_token_ids: vec![3],
        label: 1,
    };
    let report = check_model_gradients(&config, &params, &example, 1e-5)?;

    println!("{:<22}max rel err", "parameter");
    for (name, err) in &report.per_param {
        println!("{name:<22}{err:.3e}");
    }
    println!();
    println!(
        "worst: {}[{}] rel err {:.3e} (analytic {:.6e}, numeric {:.6e})",
        report.worst_param, report.worst_coord, report.max_rel_err, report.analytic, report.numeric
    );
    let passed = report.max_rel_err < 1e-4;
    println!(
        "gradient check {}: max relative error {:.3e}, threshold 1.0e-4",
        if passed { "PASSED" } else { "FAILED" },
        report.max_rel_err
    );
    Ok(passed)
}

//! Trains on the bundled corpus, then asks the sentiment capsules which
//! words each one is about: the reconstruction of an active capsule is
//! compared against every word embedding and the words are ranked by
//! cosine. On the overfit model the aspect term comes out on top.
//!
//!     cargo run --release -p capsar --example detect_terms

use std::path::Path;

use capsar::cli::RunConfig;
use capsar::data::embeddings::EmbeddingTable;
use capsar::data::{to_examples, tokenize, Vocabulary, CLASS_NAMES};
use capsar::error::Result;
use capsar::eval::{detect_aspects, detection_metrics, units_for_sentence};
use capsar::model::ModelParams;
use capsar::rng::Rng;
use capsar::train::{fit, AdamConfig, FitOptions};

fn main() -> Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let config = RunConfig::parse(&std::fs::read_to_string(data.join("synthetic.conf"))?)?;
    let corpus = std::fs::read_to_string(data.join("synthetic_train.tsv"))?;
    let sentences = capsar::data::tsv::parse_tsv(&corpus)?;
    let vocab = Vocabulary::build(&sentences);
    let examples = to_examples(&sentences, &vocab, config.model.t_max)?.examples;

    let mut rng = Rng::new(config.seed);
    let table = EmbeddingTable::random(vocab.len(), config.model.d_x, &mut rng);
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
    eprintln!("overfitting {} examples…", examples.len());
    let trained = fit(&examples, &examples, &config.model, params, &options, |_| {})?.params;

    let mut units = Vec::new();
    for sentence in &sentences {
        let tokens = tokenize(&sentence.text);
        let kept = tokens.len().min(config.model.t_max);
        let ids: Vec<usize> = tokens[..kept].iter().map(|t| vocab.id(&t.text)).collect();
        let results = detect_aspects(&ids, &trained, &config.model, config.threshold)?;
        println!("{}", sentence.text);
        for result in &results {
            let ranked: Vec<String> = result
                .word_scores
                .iter()
                .take(3)
                .map(|w| format!("{} ({:.3})", tokens[w.position].text, w.score))
                .collect();
            println!(
                "  {} capsule, length {:.3}: {}",
                CLASS_NAMES[result.class],
                result.length,
                ranked.join(", ")
            );
        }
        units.extend(units_for_sentence(&tokens, kept, &sentence.aspects, &results));
    }

    let report = detection_metrics(&units)?;
    println!(
        "\nP@1 {:.4}, R@5 {:.4}, mAP {:.4} over {} units",
        report.p_at_1, report.r_at_5, report.map, report.units
    );
    Ok(())
}

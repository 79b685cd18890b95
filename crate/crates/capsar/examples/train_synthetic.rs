//! Trains the capsule model on the bundled synthetic corpus through the
//! library API and prints the accuracy trajectory.
//!
//!     cargo run --release -p capsar --example train_synthetic

use std::path::Path;

use capsar::cli::RunConfig;
use capsar::data::{to_examples, Vocabulary};
use capsar::data::embeddings::EmbeddingTable;
use capsar::error::Result;
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
    println!(
        "{} examples, vocabulary of {} words",
        examples.len(),
        vocab.len()
    );

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

    let result = fit(&examples, &examples, &config.model, params, &options, |r| {
        if r.epoch % 25 == 0 || r.epoch == 1 {
            println!(
                "epoch {:>3}: loss {:>9.6}, accuracy {:.2}",
                r.epoch, r.train_loss, r.dev_accuracy
            );
        }
    })?;

    println!(
        "first epoch at 100% accuracy: {}",
        result.best_epoch
    );
    Ok(())
}

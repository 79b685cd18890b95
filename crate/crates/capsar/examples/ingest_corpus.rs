//! Walks the data pipeline: parse a corpus (TSV here, XML works the same
//! way), build the vocabulary, expand sentences into per-aspect training
//! examples, load pretrained embeddings with coverage reporting, and cut
//! padded batches.
//!
//!     cargo run -p capsar --example ingest_corpus

use std::path::Path;

use capsar::data::embeddings::load_embeddings;
use capsar::data::tsv::parse_tsv;
use capsar::data::{batch_iter, to_examples, Vocabulary};
use capsar::error::Result;
use capsar::rng::Rng;

fn main() -> Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let corpus = std::fs::read_to_string(data.join("synthetic_train.tsv"))?;
    let sentences = parse_tsv(&corpus)?;
    println!("parsed {} sentences", sentences.len());
    let first = &sentences[0];
    println!(
        "first: {:?} with aspect {:?} ({})",
        first.text,
        first.aspects[0].term,
        first.aspects[0].polarity.as_str()
    );

    let vocab = Vocabulary::build(&sentences);
    println!(
        "vocabulary: {} entries ({} words + PAD + UNK)",
        vocab.len(),
        vocab.non_reserved().len()
    );

    let t_max = 8;
    let set = to_examples(&sentences, &vocab, t_max)?;
    println!(
        "{} examples, {} aspects lost to truncation",
        set.examples.len(),
        set.skipped_truncated
    );

    // A miniature pretrained table covering only two of the words; the
    // rest fall back to random initialization and the report says so.
    let pretrained = "battery 0.1 0.2 0.3 0.4\nscreen 0.5 0.6 0.7 0.8\n";
    let mut rng = Rng::new(1);
    let (_, coverage) = load_embeddings(pretrained, &vocab, 4, &mut rng)?;
    println!(
        "embedding coverage: {}/{} words, {} duplicates in the file",
        coverage.covered, coverage.total, coverage.duplicates
    );

    let batches = batch_iter(&set.examples, 6, t_max, &mut rng, true)?;
    println!("{} batches of up to 6", batches.len());
    let row = batches[0].padded_row(0);
    println!("one padded row: {row:?}");
    Ok(())
}

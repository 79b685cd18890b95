//! Saves a model to the binary checkpoint format, loads it back, and
//! demonstrates both bitwise stability and corruption detection.
//!
//!     cargo run -p capsar --example checkpoint_roundtrip

use capsar::error::Result;
use capsar::model::{ModelConfig, ModelParams};
use capsar::rng::Rng;
use capsar::tensor::Tensor;
use capsar::data::Vocabulary;
use capsar::train::{load_checkpoint, save_checkpoint, Checkpoint};

fn main() -> Result<()> {
    let config = ModelConfig::toy();
    let words: Vec<String> = ["screen", "battery", "great", "awful"]
        .iter()
        .map(|w| w.to_string())
        .collect();
    let vocab = Vocabulary::from_words(&words);
    let mut rng = Rng::new(9);
    let embed = Tensor::new(
        vec![vocab.len(), config.d_x],
        (0..vocab.len() * config.d_x)
            .map(|_| rng.uniform(-0.5, 0.5) as f32)
            .collect(),
    )?;
    let params = ModelParams::init(&config, embed, &mut rng)?;
    let checkpoint = Checkpoint {
        config,
        vocab,
        params,
        seed: 9,
        epoch: 42,
    };

    let mut bytes = Vec::new();
    save_checkpoint(&checkpoint, &mut bytes)?;
    println!("serialized checkpoint: {} bytes", bytes.len());

    let reloaded = load_checkpoint(bytes.as_slice())?;
    let mut bytes_again = Vec::new();
    save_checkpoint(&reloaded, &mut bytes_again)?;
    println!(
        "round trip is bitwise stable: {} (epoch {}, seed {})",
        bytes == bytes_again,
        reloaded.epoch,
        reloaded.seed
    );

    // Flip one byte inside the first section header and watch it fail.
    let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let mut corrupt = bytes.clone();
    corrupt[16 + meta_len + 2] ^= 0xFF;
    match load_checkpoint(corrupt.as_slice()) {
        Err(e) => println!("corrupted byte rejected: {e}"),
        Ok(_) => println!("corrupted byte was NOT detected"),
    }
    Ok(())
}

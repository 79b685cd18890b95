//! Prints every parameter tensor of the full-size model with its shape
//! and element count, then the arithmetic behind sharing-weight routing:
//! one transform per parent instead of one per (child, parent) pair.
//!
//!     cargo run -p capsar --example parameter_audit

use capsar::error::Result;
use capsar::model::{expected_shapes, shared_routing_param_count, ModelConfig};

fn main() -> Result<()> {
    let config = ModelConfig::default();
    let vocab_len = 5000;

    println!("{:<22}{:<18}elements", "parameter", "shape");
    let mut total = 0usize;
    for (name, shape) in expected_shapes(&config, vocab_len) {
        let elements: usize = shape.iter().product();
        total += elements;
        println!("{name:<22}{:<18}{elements}", format!("{shape:?}"));
    }
    println!("{:<40}{total}\n", format!("total (vocabulary {vocab_len})"));

    let (stage0, saving0) = shared_routing_param_count(
        config.primary_count,
        config.inter_count,
        config.primary_dim,
        config.inter_dim,
    );
    let (stage1, saving1) = shared_routing_param_count(
        config.inter_count,
        config.sentiment_count,
        config.inter_dim,
        config.sentiment_dim,
    );
    println!(
        "primary → intermediate: {stage0} shared parameters \
         ({saving0} fewer than per-pair transforms)"
    );
    println!(
        "intermediate → sentiment: {stage1} shared parameters \
         ({saving1} fewer than per-pair transforms)"
    );
    Ok(())
}

//! Checks every analytic gradient of the full training loss against
//! central finite differences on a miniature model, in f64.
//!
//!     cargo run --release -p capsar --example gradient_check

use capsar::data::Example;
use capsar::error::Result;
use capsar::gradcheck::check_model_gradients;
use capsar::model::{ModelConfig, ModelParams};
use capsar::rng::Rng;
use capsar::tensor::Tensor;

fn main() -> Result<()> {
    let config = ModelConfig::toy();
    let mut rng = Rng::new(7);
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
    println!(
        "\nworst coordinate: {}[{}], analytic {:.6e} vs numeric {:.6e} — rel err {:.3e}",
        report.worst_param, report.worst_coord, report.analytic, report.numeric, report.max_rel_err
    );
    Ok(())
}

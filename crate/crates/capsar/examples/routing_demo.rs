//! Shows routing by agreement sharpening the coupling coefficients: five
//! child capsules vote for two parents through a shared transform, and
//! with more iterations each child commits harder to the parent its
//! prediction agrees with.
//!
//!     cargo run -p capsar --example routing_demo

use capsar::error::Result;
use capsar::model::capsules::route;
use capsar::rng::Rng;
use capsar::tape::GradTape;
use capsar::tensor::Tensor;

fn main() -> Result<()> {
    let (children_n, parents_n, d_child, d_parent) = (5, 2, 3, 4);
    let mut rng = Rng::new(3);
    let children_data: Vec<f64> = (0..children_n * d_child)
        .map(|_| rng.uniform(-1.5, 1.5))
        .collect();
    let weights_data: Vec<f64> = (0..parents_n * d_parent * d_child)
        .map(|_| rng.uniform(-1.0, 1.0))
        .collect();

    for iters in 1..=4 {
        let mut tape = GradTape::<f64>::new();
        let children = tape.leaf(Tensor::new(
            vec![children_n, d_child],
            children_data.clone(),
        )?);
        let weights = tape.leaf(Tensor::new(
            vec![parents_n, d_parent, d_child],
            weights_data.clone(),
        )?);
        let (parents, couplings) = route(&mut tape, children, weights, iters)?;

        println!("after {iters} iteration(s):");
        let c = tape.value(couplings);
        for child in 0..children_n {
            let row: Vec<String> = (0..parents_n)
                .map(|p| format!("{:.4}", c.data()[child * parents_n + p]))
                .collect();
            println!("  child {child} couples [{}]", row.join(", "));
        }
        let q = tape.value(parents);
        for parent in 0..parents_n {
            let norm: f64 = q.data()[parent * d_parent..(parent + 1) * d_parent]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            println!("  parent {parent} norm {norm:.4}");
        }
    }
    Ok(())
}

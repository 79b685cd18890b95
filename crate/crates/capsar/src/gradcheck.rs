//! Central-finite-difference verification of tape gradients.
//!
//! Everything differentiable in this crate is checked against the same
//! oracle: perturb one parameter coordinate by ±eps, re-run the scalar
//! computation, and compare (f⁺ − f⁻) / 2eps with the gradient the tape
//! produced. Runs in 64-bit; at 32-bit the difference quotient drowns in
//! rounding noise long before it reaches the 1e-4 acceptance threshold.

use crate::data::Example;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::rng::Rng;
use crate::tape::GradTape;
use crate::tensor::Tensor;
use crate::train::{aspect_target, example_loss_with_target, total_loss};

/// Worst coordinate found by a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct FdReport {
    /// Largest relative error over all coordinates checked.
    pub max_rel_err: f64,
    /// Name of the parameter holding the worst coordinate.
    pub worst_param: String,
    /// Flat index of the worst coordinate within that parameter.
    pub worst_coord: usize,
    /// Tape gradient at the worst coordinate.
    pub analytic: f64,
    /// Central difference at the worst coordinate.
    pub numeric: f64,
    /// Total coordinates swept.
    pub coords_checked: usize,
    /// Largest relative error per parameter, in sweep order.
    pub per_param: Vec<(String, f64)>,
}

/// Loss evaluated on a perturbed copy of the named parameters.
pub type LossProbe<'a> = dyn FnMut(&[(String, Tensor<f64>)]) -> Result<f64> + 'a;

/// Sweeps every coordinate of every named parameter with central
/// differences and compares against `analytic` (one flat gradient buffer
/// per parameter, same order).
///
/// `f` must be deterministic — in particular dropout has to be disabled —
/// and is re-evaluated twice per coordinate on a perturbed copy of the
/// parameters. Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)` so near-zero gradients do not divide
/// by near-zero.
pub fn central_diff_check(
    params: &[(String, Tensor<f64>)],
    analytic: &[Vec<f64>],
    eps: f64,
    f: &mut LossProbe,
) -> Result<FdReport> {
    if params.len() != analytic.len() {
        return Err(Error::Contract(format!(
            "central_diff_check: {} params but {} gradient buffers",
            params.len(),
            analytic.len()
        )));
    }
    for (p, (name, t)) in analytic.iter().zip(params) {
        if p.len() != t.len() {
            return Err(Error::Contract(format!(
                "central_diff_check: gradient for {name} has {} entries, parameter has {}",
                p.len(),
                t.len()
            )));
        }
    }

    let mut work: Vec<(String, Tensor<f64>)> = params.to_vec();
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_coord: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
        per_param: Vec::with_capacity(params.len()),
    };

    for (pi, (name, tensor)) in params.iter().enumerate() {
        let mut param_worst = 0.0f64;
        for (ci, &theta) in tensor.data().iter().enumerate() {
            work[pi].1.data_mut()[ci] = theta + eps;
            let f_plus = f(&work)?;
            work[pi].1.data_mut()[ci] = theta - eps;
            let f_minus = f(&work)?;
            work[pi].1.data_mut()[ci] = theta;

            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "finite-difference probe of {name}[{ci}] produced non-finite values \
                     ({f_plus}, {f_minus})"
                )));
            }

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[pi][ci];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.coords_checked += 1;
            param_worst = param_worst.max(rel);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_coord = ci;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        report.per_param.push((name.clone(), param_worst));
    }

    Ok(report)
}

/// Checks every model parameter's gradient of the complete training
/// objective (margin + λ·reconstruction on one example) against central
/// finite differences. Dropout is off, so the objective is deterministic.
pub fn check_model_gradients(
    config: &ModelConfig,
    params: &ModelParams<f64>,
    example: &Example,
    eps: f64,
) -> Result<FdReport> {
    let vocab_len = params.embed.shape()[0];
    // The reconstruction target is a stop-gradient read of the embedding
    // table, so the probes must hold it at the unperturbed value — that is
    // the function whose gradient the tape reports.
    let v_asp = aspect_target(&params.embed, &example.aspect_token_ids)?;
    let loss_of = |p: &ModelParams<f64>| -> Result<f64> {
        let mut tape = GradTape::new();
        let bound = p.bind(&mut tape);
        let mut rng = Rng::new(0);
        let loss = example_loss_with_target(
            &mut tape, &bound, example, config, &mut rng, false, true, &v_asp,
        )?;
        let (_, breakdown) = total_loss(&mut tape, &[loss], config.lambda)?;
        Ok(breakdown.total)
    };

    let named: Vec<(String, Tensor<f64>)> = params
        .entries()
        .into_iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();

    let analytic: Vec<Vec<f64>> = {
        let mut tape = GradTape::new();
        let bound = params.bind(&mut tape);
        let mut rng = Rng::new(0);
        let loss = example_loss_with_target(
            &mut tape, &bound, example, config, &mut rng, false, true, &v_asp,
        )?;
        let (total, _) = total_loss(&mut tape, &[loss], config.lambda)?;
        tape.backward(total)?;
        bound
            .ids()
            .into_iter()
            .map(|(_, id)| tape.grad_or_zeros(id).data().to_vec())
            .collect()
    };

    central_diff_check(&named, &analytic, eps, &mut |perturbed| {
        let rebuilt = ModelParams::from_entries(config, vocab_len, perturbed.to_vec())?;
        loss_of(&rebuilt)
    })
}

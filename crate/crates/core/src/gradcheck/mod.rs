//! Finite-difference gradient checking in double precision, using the
//! fourth-order central stencil `(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`.
//!
//! The checker rebuilds the graph from scratch for every perturbed input, so
//! it exercises the same code path as training. Perturbations that move a
//! piecewise-linear unit (relu, leaky relu, max, clamp) across its kink are
//! skipped: finite differences are meaningless there, and such crossings are
//! detected exactly through [`Tape::kink_signature`].

mod battery;

pub use battery::{faulty_fixture, run_battery, CheckOutcome, MODEL_TOLERANCE, OP_TOLERANCE};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor of the relative error. Derivatives smaller than this
/// are compared in absolute terms: on a model-sized loss the finite
/// differences carry rounding noise near 1e-10, so a relative test of a
/// derivative below the floor would measure that noise.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    /// `(input index, element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    /// Analytic and numeric derivative at the worst element.
    pub worst_values: Option<(f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks the gradient of a scalar graph with respect to a single input and
/// returns the maximum relative error.
pub fn grad_check<F>(build: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let report = grad_check_inputs(|tape, vars| build(tape, vars[0]), std::slice::from_ref(x), eps)?;
    Ok(report.max_relative_error)
}

fn evaluate<F>(build: &F, inputs: &[Tensor<f64>]) -> Result<(f64, u64)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let value = tape.value(loss);
    if !value.shape().is_scalar() {
        return Err(Error::NonScalarLoss(value.shape()));
    }
    Ok((value.data()[0], tape.kink_signature()))
}

/// Checks the gradient with respect to every element of every input.
pub fn grad_check_inputs<F>(build: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::GradCheck(format!("step must be positive, got {eps}")));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let base = tape.value(loss).data().first().copied();
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    drop(tape);

    let (again, base_sig) = evaluate(&build, inputs)?;
    if base.map(f64::to_bits) != Some(again.to_bits()) {
        return Err(Error::GradCheck(format!(
            "graph builder is not deterministic: {base:?} then {again}"
        )));
    }

    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (k, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = work[k].data()[i];
            let mut at = |offset: f64| -> Result<(f64, u64)> {
                work[k].data_mut()[i] = orig + offset;
                evaluate(&build, &work)
            };
            let (p1, s1) = at(eps)?;
            let (m1, s2) = at(-eps)?;
            let (p2, s3) = at(2.0 * eps)?;
            let (m2, s4) = at(-2.0 * eps)?;
            work[k].data_mut()[i] = orig;
            if [s1, s2, s3, s4].iter().any(|&s| s != base_sig) {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((k, i));
                report.worst_values = Some((a, numeric));
            }
        }
    }
    Ok(report)
}

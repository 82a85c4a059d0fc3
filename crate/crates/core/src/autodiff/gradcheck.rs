use rayon::prelude::*;

use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Worst element of one input in a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct InputCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Elements whose `±eps` step crossed a kink and were re-measured with a
    /// smaller step.
    pub reduced_step: usize,
    /// Elements measured with a one-sided difference because only one side
    /// of the step crossed a kink.
    pub one_sided: usize,
    /// Elements where even the smallest step crossed a kink. Their central
    /// difference is still included in `max_rel_error`.
    pub unresolved: usize,
}

/// Outcome of [`grad_check`]: one entry per input tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub inputs: Vec<InputCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs
            .iter()
            .map(|c| c.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|c| c.max_rel_error <= self.tol)
    }
}

/// Steps tried when `±eps` straddles a kink, as fractions of `eps`.
const STEP_FRACTIONS: [f64; 4] = [1.0, 1e-1, 1e-2, 1e-3];

/// Compares the analytic gradient of a scalar function against central
/// differences `(f(x+h) − f(x−h)) / 2h`, element by element, with `h = eps`.
///
/// Central differences are only meaningful on a smooth piece of `f`. When
/// either evaluation takes a different branch through a ReLU, pooling
/// winner or custom rule than the unperturbed point (see
/// [`Graph::branch_signature`]), the element is re-measured with `h` shrunk
/// by factors of ten, down to `eps / 1000`. At each step, if only one side
/// crosses, the one-sided difference `±(4f(x±h) − f(x±2h) − 3f(x)) / 2h` on
/// the other side is used instead; it has the same `O(h²)` error.
///
/// The relative error of an element is `|a − n| / max(|a|, |n|, 1e-8)`.
/// Failures are reported through [`GradCheckReport::passed`], not as errors;
/// `Err` is only returned when `f` itself fails or is not scalar-valued.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var> + Sync,
{
    let evaluate = |values: &[Tensor]| -> Result<(f64, u64)> {
        let mut graph = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| graph.constant(t.clone())).collect();
        let out = f(&mut graph, &vars)?;
        let value = graph
            .value(out)
            .item()
            .ok_or_else(|| Error::shape("grad_check", "function must return a scalar"))?;
        Ok((value, graph.branch_signature()))
    };

    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.param(t.clone())).collect();
    let out = f(&mut graph, &vars)?;
    let base = graph.branch_signature();
    let f0 = graph
        .value(out)
        .item()
        .ok_or_else(|| Error::shape("grad_check", "function must return a scalar"))?;
    graph.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|v| graph.grad(*v).expect("leaf requires grad").clone())
        .collect();

    let mut checks = Vec::with_capacity(inputs.len());
    for (which, input) in inputs.iter().enumerate() {
        // (derivative, number of step reductions, resolved, one-sided)
        let numeric: Vec<(f64, usize, bool, bool)> = (0..input.len())
            .into_par_iter()
            .map(|i| {
                let x = input.data()[i];
                let mut shifted = inputs.to_vec();
                let mut at = |offset: f64| {
                    shifted[which].data_mut()[i] = x + offset;
                    evaluate(&shifted)
                };
                let mut last = (0.0, 0, false, false);
                for (tries, frac) in STEP_FRACTIONS.iter().enumerate() {
                    let h = eps * frac;
                    let (plus, sig_plus) = at(h)?;
                    let (minus, sig_minus) = at(-h)?;
                    last = ((plus - minus) / (2.0 * h), tries, false, false);
                    if sig_plus == base && sig_minus == base {
                        return Ok((last.0, tries, true, false));
                    }
                    // One side stays on the base piece: second-order
                    // one-sided difference on that side.
                    for (side, near, near_sig) in [(1.0, plus, sig_plus), (-1.0, minus, sig_minus)] {
                        if near_sig != base {
                            continue;
                        }
                        let (far, far_sig) = at(2.0 * side * h)?;
                        if far_sig == base {
                            let d = side * (4.0 * near - far - 3.0 * f0) / (2.0 * h);
                            return Ok((d, tries, true, true));
                        }
                    }
                }
                Ok(last)
            })
            .collect::<Result<_>>()?;

        let mut worst = InputCheck {
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: analytic[which].data()[0],
            numeric: numeric[0].0,
            reduced_step: numeric.iter().filter(|n| n.1 > 0).count(),
            one_sided: numeric.iter().filter(|n| n.3).count(),
            unresolved: numeric.iter().filter(|n| !n.2).count(),
        };
        for (i, (&a, &(n, ..))) in analytic[which].data().iter().zip(&numeric).enumerate() {
            let denom = a.abs().max(n.abs()).max(1e-8);
            let rel = (a - n).abs() / denom;
            if rel > worst.max_rel_error || rel.is_nan() {
                worst.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                worst.worst_index = i;
                worst.analytic = a;
                worst.numeric = n;
            }
        }
        checks.push(worst);
    }
    Ok(GradCheckReport { inputs: checks, tol })
}

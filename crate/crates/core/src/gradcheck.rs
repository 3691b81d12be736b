//! Central finite-difference verification of tape gradients.
//!
//! The builder closure is invoked many times, each time on a fresh tape with
//! the current parameter values bound, and must be deterministic: two calls
//! with the same parameter values must produce the same loss. Anything
//! stochastic inside (dropout masks, sampled data) has to be derived from a
//! fixed seed per call.

use crate::params::{Bound, ParamSet};
use crate::tensor::{Tape, TensorId};

/// `|a - n| / max(|a|, |n|, 1e-8)` — symmetric relative error with an
/// absolute floor so near-zero gradients do not blow up the ratio.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone)]
pub struct BlockCheck {
    pub name: String,
    /// Coordinates actually compared (every `stride`-th one).
    pub checked: usize,
    pub total: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err <= tol
    }

    /// One line per block, suitable for printing.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            out.push_str(&format!(
                "{}: {}/{} coords, max rel err {:.3e} (analytic {:.6e}, numeric {:.6e} at [{}])\n",
                b.name,
                b.checked,
                b.total,
                b.max_rel_err,
                b.analytic_at_worst,
                b.numeric_at_worst,
                b.worst_index
            ));
        }
        out.push_str(&format!("overall max rel err {:.3e}\n", self.max_rel_err));
        out
    }
}

/// Compare tape gradients of `build`'s scalar output against central
/// differences with step `eps`, checking every `stride`-th coordinate of
/// each block (coordinate 0 is always included, so every block is covered).
pub fn finite_diff_check<F>(
    params: &mut ParamSet,
    eps: f64,
    stride: usize,
    mut build: F,
) -> GradCheckReport
where
    F: FnMut(&mut Tape, &Bound) -> TensorId,
{
    assert!(stride >= 1, "stride must be at least 1");
    assert!(eps > 0.0, "eps must be positive");

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = build(&mut tape, &bound);
    tape.backward(loss);
    let analytic = params.grads(&tape, &bound);
    drop(tape);

    let mut blocks = Vec::with_capacity(params.len());
    let mut overall = 0.0f64;
    for b in 0..params.len() {
        let total = params.get(b).data.len();
        let mut check = BlockCheck {
            name: params.get(b).name.clone(),
            checked: 0,
            total,
            max_rel_err: 0.0,
            worst_index: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
        };
        let mut j = 0;
        while j < total {
            let orig = params.get(b).data[j];
            params.get_mut(b).data[j] = orig + eps;
            let plus = eval(&mut build, params);
            params.get_mut(b).data[j] = orig - eps;
            let minus = eval(&mut build, params);
            params.get_mut(b).data[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = rel_err(analytic[b][j], numeric);
            if err > check.max_rel_err || check.checked == 0 {
                check.max_rel_err = err;
                check.worst_index = j;
                check.analytic_at_worst = analytic[b][j];
                check.numeric_at_worst = numeric;
            }
            check.checked += 1;
            j += stride;
        }
        overall = overall.max(check.max_rel_err);
        blocks.push(check);
    }
    GradCheckReport {
        blocks,
        max_rel_err: overall,
    }
}

fn eval<F>(build: &mut F, params: &ParamSet) -> f64
where
    F: FnMut(&mut Tape, &Bound) -> TensorId,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = build(&mut tape, &bound);
    tape.value_scalar(loss)
}

/// Check one op (or a small expression) with named inputs; every coordinate
/// is compared.
pub fn check_op<F>(inputs: &[(&str, Vec<f64>, Vec<usize>)], eps: f64, build: F) -> GradCheckReport
where
    F: Fn(&mut Tape, &[TensorId]) -> TensorId,
{
    let mut params = ParamSet::new();
    let ids: Vec<_> = inputs
        .iter()
        .map(|(name, data, shape)| params.add(name, shape.clone(), data.clone()))
        .collect();
    finite_diff_check(&mut params, eps, 1, |tape, bound| {
        let tids: Vec<TensorId> = ids.iter().map(|&p| bound.id(p)).collect();
        build(tape, &tids)
    })
}

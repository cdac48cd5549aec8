//! Central finite-difference gradient checking.
//!
//! The numeric side only ever runs forward passes on untracked arrays, so it
//! is independent of every backward rule it is used to check.

use crate::autodiff::{DiffArray, Tape};
use crate::error::Result;

/// Step used by the checks in this crate.
pub const DEFAULT_STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so exact zeros compare absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Mismatch {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub failures: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.failures.extend(other.failures);
    }
}

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares backward-pass gradients of the scalar `f(inputs)` against central
/// differences for every element of every input.
pub fn check_gradients<F>(f: F, inputs: &[DiffArray], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[DiffArray]) -> Result<DiffArray>,
{
    let mut tape = Tape::new();
    let leaves = inputs
        .iter()
        .map(|x| tape.param(x))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &leaves)?;
    let grads = tape.backward(&loss)?;

    let eval = |xs: &[DiffArray]| -> Result<f64> {
        let mut t = Tape::new();
        f(&mut t, xs)?.item()
    };

    let mut report = GradCheckReport::default();
    let mut current: Vec<DiffArray> = inputs.iter().map(DiffArray::detach).collect();
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(leaf).expect("leaf gradient").to_vec();
        let base = inputs[i].to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let mut plus = base.clone();
            plus[j] += step;
            current[i] = DiffArray::new(inputs[i].shape().to_vec(), plus)?;
            let fp = eval(&current)?;
            let mut minus = base.clone();
            minus[j] -= step;
            current[i] = DiffArray::new(inputs[i].shape().to_vec(), minus)?;
            let fm = eval(&current)?;
            let numeric = (fp - fm) / (2.0 * step);
            let rel = relative_error(a, numeric);
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(rel);
            if !(rel < tol) {
                report.failures.push(Mismatch {
                    input: i,
                    element: j,
                    analytic: a,
                    numeric,
                    rel_err: rel,
                });
            }
        }
        current[i] = inputs[i].detach();
    }
    Ok(report)
}

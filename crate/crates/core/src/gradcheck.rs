//! Central finite-difference checks for tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Denominator floor for relative errors; below it the error is effectively
/// absolute.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// `(input index, flat entry index)` of the worst entry.
    pub worst: (usize, usize),
    pub entries_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `h`.
///
/// `f` builds the computation on a fresh tape from the given parameter
/// handles and returns the 1x1 loss node. It is called once for the analytic
/// pass and twice per input entry for the numeric pass, so it must be
/// deterministic (re-seed any RNG inside it).
pub fn check_gradients<F>(inputs: &[DenseMatrix], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[DenseMatrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        if tape.value(loss).shape() != (1, 1) {
            return Err(Error::config("check_gradients: loss must be 1x1"));
        }
        Ok(tape.scalar(loss))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        entries_checked: 0,
    };
    let mut probe: Vec<DenseMatrix> = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for entry in 0..inputs[which].len() {
            let original = inputs[which].as_slice()[entry];
            probe[which].as_mut_slice()[entry] = original + h;
            let up = eval(&probe)?;
            probe[which].as_mut_slice()[entry] = original - h;
            let down = eval(&probe)?;
            probe[which].as_mut_slice()[entry] = original;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic.as_slice()[entry], numeric);
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = (which, entry);
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}

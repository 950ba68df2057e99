//! Central finite-difference gradient checks against the tape.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Denominator floor for the relative error.
pub const ABS_FLOOR: f64 = 1e-8;

/// Compares the autodiff gradient of a scalar function of one tensor against
/// central differences with the given step. Returns the largest elementwise
/// relative error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, at: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    finite_diff_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(at), step)
}

/// Multi-input variant of [`finite_diff_check`]: every input tensor is
/// perturbed element by element.
pub fn finite_diff_check_many<F>(f: F, at: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::InvalidArgument(
            "finite-difference step must be positive".into(),
        ));
    }
    let analytic = autodiff_gradients(&f, at)?;
    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = at.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..at[t].len() {
            let orig = at[t].data()[i];
            probe[t].data_mut()[i] = orig + step;
            let up = evaluate(&f, &probe)?;
            probe[t].data_mut()[i] = orig - step;
            let down = evaluate(&f, &probe)?;
            probe[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(grad[i], numeric));
        }
    }
    Ok(worst)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

fn autodiff_gradients<F>(f: &F, at: &[Tensor]) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = at.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(at)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect())
}

fn evaluate<F>(f: &F, at: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = at.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.item(out))
}

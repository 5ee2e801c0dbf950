//! Central finite-difference verification of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so entries whose true gradient
/// is ~0 are judged by absolute error instead of amplified rounding noise.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// `(input index, flat element index)` of the largest relative error.
    pub worst: Option<(usize, usize)>,
    pub elements_checked: usize,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let v = out.value();
    if v.len() != 1 {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.data()[0])
}

/// Tape gradients of `f` at `inputs`, one tensor per input.
pub fn analytic_gradients<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars)?;
    if out.value().len() != 1 {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar function, got shape {:?}",
            out.shape()
        )));
    }
    let grads = tape.backward(out)?;
    Ok(vars.iter().map(|&v| grads.wrt(v)).collect())
}

/// Compares `analytic` against central differences of `f`.
pub fn compare_with_finite_differences<F>(
    f: &F,
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Parameter(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    if analytic.len() != inputs.len() {
        return Err(Error::Contract(format!(
            "{} analytic gradients for {} inputs",
            analytic.len(),
            inputs.len()
        )));
    }
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        worst: None,
        elements_checked: 0,
        tol,
        passed: true,
    };
    for (i, grad) in analytic.iter().enumerate() {
        if grad.shape() != inputs[i].shape() {
            return Err(Error::dim("grad_check", grad.shape(), inputs[i].shape()));
        }
        for e in 0..inputs[i].len() {
            let x0 = inputs[i].data()[e];
            probe[i].data_mut()[e] = x0 + eps;
            let plus = eval_scalar(f, &probe)?;
            probe[i].data_mut()[e] = x0 - eps;
            let minus = eval_scalar(f, &probe)?;
            probe[i].data_mut()[e] = x0;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[e];
            let abs = (a - numeric).abs();
            let rel = relative_error(a, numeric);
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = rel.max(report.max_rel_err);
                report.worst = Some((i, e));
            }
            report.elements_checked += 1;
        }
    }
    report.passed = report.max_rel_err.is_finite() && report.max_rel_err < tol;
    Ok(report)
}

/// Checks tape gradients of the scalar function `f` against central differences.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let analytic = analytic_gradients(&f, inputs)?;
    compare_with_finite_differences(&f, inputs, &analytic, eps, tol)
}

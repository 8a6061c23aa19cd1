use alloc::format;
use alloc::vec::Vec;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Max over all checked coordinates of
    /// `|analytic - numeric| / (|numeric| + 1e-8)`.
    pub max_relative_error: f64,
    /// Per-input maximum, in input order.
    pub per_input: Vec<f64>,
    /// `(input, coordinate)` where the maximum was attained.
    pub worst: (usize, usize),
}

fn evaluate<T: Scalar>(f: &impl Fn(&mut Tape<T>, &[Var]) -> Result<Var>, inputs: &[Tensor<T>]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.numel() != 1 {
        return Err(Error::shape("grad_check", value.shape(), &[1]));
    }
    let v = value.item().as_f64();
    if !v.is_finite() {
        return Err(Error::NonFinite {
            location: format!("grad_check forward value {v}"),
        });
    }
    Ok(v)
}

/// Checks the gradient of a scalar function of several inputs against
/// central finite differences with step `eps`.
pub fn grad_check_inputs<T: Scalar>(
    f: impl Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
    inputs: &[Tensor<T>],
    eps: f64,
) -> Result<GradCheck> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("grad_check eps must be > 0, got {eps}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let step = T::from_f64_lossy(eps);
    let mut probe: Vec<Tensor<T>> = inputs.to_vec();
    let mut report = GradCheck {
        max_relative_error: 0.0,
        per_input: Vec::with_capacity(inputs.len()),
        worst: (0, 0),
    };
    for (i, var) in vars.iter().enumerate() {
        let zero = Tensor::zeros(inputs[i].shape());
        let analytic = grads.get(*var).unwrap_or(&zero);
        let mut input_max = 0.0f64;
        for j in 0..inputs[i].numel() {
            let original = inputs[i].data()[j];
            probe[i].data_mut()[j] = original + step;
            let plus = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = original - step;
            let minus = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = original;
            // The realized step differs from eps in low precision.
            let h = (original + step).as_f64() - (original - step).as_f64();
            let numeric = (plus - minus) / h;
            let err = (analytic.data()[j].as_f64() - numeric).abs() / (numeric.abs() + 1e-8);
            if err > input_max {
                input_max = err;
            }
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = (i, j);
            }
        }
        report.per_input.push(input_max);
    }
    Ok(report)
}

/// Single-input form of [`grad_check_inputs`]; returns the max relative error.
pub fn grad_check<T: Scalar>(f: impl Fn(&mut Tape<T>, Var) -> Result<Var>, x: &Tensor<T>, eps: f64) -> Result<f64> {
    let report = grad_check_inputs(|tape, vars| f(tape, vars[0]), core::slice::from_ref(x), eps)?;
    Ok(report.max_relative_error)
}

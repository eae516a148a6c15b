use alloc::format;
use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)
}

fn scalar_of(tape: &Tape, out: Var) -> Result<f64> {
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::contract(format!(
            "gradient check needs a scalar-valued function, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.data()[0])
}

/// Central-difference gradient of a scalar function with respect to every
/// input coordinate.
pub fn central_difference<F>(f: F, inputs: &[Tensor], h: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = evaluate(&f, &work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = evaluate(&f, &work)?;
            work[i].data_mut()[j] = orig;
            grad.data_mut()[j] = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Largest relative disagreement between tape gradients and central
/// differences, `|a − n| / max(1, |a|, |n|)` over all input coordinates.
pub fn gradient_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::contract(format!("step {h} outside [1e-7, 1e-3]")));
    }
    if let Some(bad) = inputs.iter().find(|t| !t.all_finite()) {
        return Err(Error::Numeric {
            op: "gradient_check",
            detail: format!("non-finite input of shape {:?}", bad.shape()),
        });
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    let grads = tape.backward(out)?;
    let numeric = central_difference(&f, inputs, h)?;

    let mut worst: f64 = 0.0;
    for (v, num) in vars.iter().zip(&numeric) {
        let analytic = grads.get(*v).expect("tracked leaf has a gradient");
        for (&a, &n) in analytic.data().iter().zip(num.data()) {
            let denom = 1f64.max(libm::fabs(a)).max(libm::fabs(n));
            worst = worst.max(libm::fabs(a - n) / denom);
        }
    }
    Ok(worst)
}

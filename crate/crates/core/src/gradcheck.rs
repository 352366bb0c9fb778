//! Finite-difference validation of reverse-mode gradients.

use crate::autograd::{Tape, Var};
use crate::error::{contract_err, Result};
use crate::nn::Module;
use crate::tensor::Tensor;

/// Worst-case relative disagreement between the tape gradient of a scalar
/// function and its central finite difference.
///
/// For each coordinate `i` the error is
/// `|analytic − cd| / max(|analytic|, |cd|, 1e-8)` with
/// `cd = (f(x + eps·eᵢ) − f(x − eps·eᵢ)) / (2·eps)`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let xv = tape.leaf(x);
    let y = f(xv)?;
    if y.value().numel() != 1 {
        return contract_err(format!(
            "grad_check needs a scalar-valued function, got shape {:?}",
            y.shape()
        ));
    }
    let grads = tape.backward(y)?;
    let analytic = grads.of(xv).expect("leaf gradient").clone();

    let eval = |point: Tensor<f64>| -> Result<f64> {
        let tape = Tape::no_grad();
        let v = tape.constant(point);
        f(v)?.value().item()
    };

    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let cd = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = (a - cd).abs() / a.abs().max(cd.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Checks the gradient with respect to several tensors at once: `f`
/// receives one variable per entry of `inputs` and must return a scalar.
/// Returns the worst relative error over all coordinates of all inputs.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_, f64>> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let y = f(&vars)?;
    if y.value().numel() != 1 {
        return contract_err("grad_check needs a scalar-valued function");
    }
    let grads = tape.backward(y)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.of(v).unwrap().clone()).collect();

    let eval = |point: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::no_grad();
        let vars: Vec<Var<'_, f64>> = point.iter().map(|t| tape.constant(t.clone())).collect();
        f(&vars)?.value().item()
    };

    let mut worst: f64 = 0.0;
    let mut point: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.numel() {
            let orig = input.data()[i];
            point[k].data_mut()[i] = orig + eps;
            let fp = eval(&point)?;
            point[k].data_mut()[i] = orig - eps;
            let fm = eval(&point)?;
            point[k].data_mut()[i] = orig;
            let cd = (fp - fm) / (2.0 * eps);
            let a = analytic[k].data()[i];
            worst = worst.max((a - cd).abs() / a.abs().max(cd.abs()).max(1e-8));
        }
    }
    Ok(worst)
}

/// Like [`grad_check_many`], additionally covering every parameter of
/// `module`. Parameters are perturbed in place and restored.
pub fn grad_check_module<M, F>(module: &mut M, inputs: &[Tensor<f64>], f: F, eps: f64) -> Result<f64>
where
    M: Module<f64>,
    F: for<'t> Fn(&M, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let (input_grads, param_grads) = {
        let tape = Tape::new();
        let vars: Vec<Var<'_, f64>> = inputs.iter().map(|t| tape.leaf(t)).collect();
        let y = f(module, &vars)?;
        if y.value().numel() != 1 {
            return contract_err("grad_check needs a scalar-valued function");
        }
        let grads = tape.backward(y)?;
        let ig: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.of(v).unwrap().clone()).collect();
        (ig, crate::optim::param_grads(module, &grads))
    };

    let eval = |m: &M, point: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::no_grad();
        let vars: Vec<Var<'_, f64>> = point.iter().map(|t| tape.constant(t.clone())).collect();
        f(m, &vars)?.value().item()
    };
    let rel = |a: f64, cd: f64| (a - cd).abs() / a.abs().max(cd.abs()).max(1e-8);

    let mut worst: f64 = 0.0;
    let mut point = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.numel() {
            let orig = input.data()[i];
            point[k].data_mut()[i] = orig + eps;
            let fp = eval(module, &point)?;
            point[k].data_mut()[i] = orig - eps;
            let fm = eval(module, &point)?;
            point[k].data_mut()[i] = orig;
            worst = worst.max(rel(input_grads[k].data()[i], (fp - fm) / (2.0 * eps)));
        }
    }

    let set = |m: &mut M, k: usize, i: usize, value: f64| {
        let mut idx = 0;
        m.visit_mut("", &mut |_, t| {
            if idx == k {
                t.data_mut()[i] = value;
            }
            idx += 1;
        });
    };
    for (k, g) in param_grads.iter().enumerate() {
        for i in 0..g.numel() {
            let mut orig = 0.0;
            let mut idx = 0;
            module.visit("", &mut |_, t| {
                if idx == k {
                    orig = t.data()[i];
                }
                idx += 1;
            });
            set(module, k, i, orig + eps);
            let fp = eval(module, inputs)?;
            set(module, k, i, orig - eps);
            let fm = eval(module, inputs)?;
            set(module, k, i, orig);
            worst = worst.max(rel(g.data()[i], (fp - fm) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_matches_closed_form() {
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let err = grad_check(|v| Ok(v.mul(v)?.sum_all()), &x, 1e-5).unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::from_f64(&[4], &[0.3, -1.7, 2.2, 9.0]).unwrap();
        let err = grad_check(|v| Ok(v.sum_all()), &x, 1e-5).unwrap();
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn non_scalar_output_is_contract_error() {
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        assert!(matches!(
            grad_check(|v| Ok(v.relu()), &x, 1e-5),
            Err(crate::Error::Contract(_))
        ));
    }
}

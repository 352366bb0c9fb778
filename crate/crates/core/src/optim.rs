//! Adam with bias correction and a cosine learning-rate schedule.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::autograd::Gradients;
use crate::error::{contract_err, dim_err, Result};
use crate::float::Float;
use crate::nn::Module;
use crate::tensor::Tensor;

pub const LR_MIN: f64 = 5e-6;
pub const LR_MAX: f64 = 5e-4;

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at step `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub lr_min: f64,
    pub lr_max: f64,
    pub total_steps: usize,
}

impl Schedule {
    pub fn new(lr_min: f64, lr_max: f64, total_steps: usize) -> Result<Self> {
        if !(lr_min >= 0.0 && lr_max >= lr_min && lr_max.is_finite()) {
            return contract_err(format!("need 0 ≤ lr_min ≤ lr_max, got {lr_min}, {lr_max}"));
        }
        Ok(Schedule {
            lr_min,
            lr_max,
            total_steps,
        })
    }

    /// `lr_min + ½(lr_max − lr_min)(1 + cos(πt/T))`; the endpoints are
    /// returned exactly and rounding is clamped into `[lr_min, lr_max]`.
    pub fn lr(&self, t: usize) -> Result<f64> {
        if t > self.total_steps {
            return contract_err(format!("step {t} beyond schedule length {}", self.total_steps));
        }
        if t == 0 {
            return Ok(self.lr_max);
        }
        if t == self.total_steps {
            return Ok(self.lr_min);
        }
        let phase = PI * t as f64 / self.total_steps as f64;
        let lr = self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + phase.cos());
        Ok(lr.clamp(self.lr_min, self.lr_max))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update of a flat parameter buffer at (1-based) step `t`.
pub fn adam_update<T: Float>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    h: AdamHyper,
) {
    let c1 = 1.0 - h.beta1.powi(t as i32);
    let c2 = 1.0 - h.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i].to_f64();
        let mi = h.beta1 * m[i].to_f64() + (1.0 - h.beta1) * g;
        let vi = h.beta2 * v[i].to_f64() + (1.0 - h.beta2) * g * g;
        m[i] = T::from_f64(mi);
        v[i] = T::from_f64(vi);
        let step = lr * (mi / c1) / ((vi / c2).sqrt() + h.eps);
        param[i] = T::from_f64(param[i].to_f64() - step);
    }
}

#[derive(Clone, Debug)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// Adam state keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub hyper: AdamHyper,
    t: u64,
    moments: HashMap<String, Moments<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(hyper: AdamHyper) -> Self {
        Adam {
            hyper,
            t: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Updates every parameter of `module` with the gradient at the same
    /// position in visit order. Parameters whose gradient is identically zero
    /// are left untouched, moments included.
    pub fn step(&mut self, module: &mut dyn Module<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return contract_err(format!("learning rate must be finite and ≥ 0, got {lr}"));
        }
        let mut count = 0;
        module.visit("", &mut |_, _| count += 1);
        if count != grads.len() {
            return dim_err(format!("{} gradients for {count} parameters", grads.len()));
        }
        let mut mismatch = None;
        let mut i = 0;
        module.visit("", &mut |name, p| {
            if p.shape() != grads[i].shape() && mismatch.is_none() {
                mismatch = Some(format!(
                    "gradient for {name} has shape {:?}, parameter {:?}",
                    grads[i].shape(),
                    p.shape()
                ));
            }
            i += 1;
        });
        if let Some(msg) = mismatch {
            return dim_err(msg);
        }

        self.t += 1;
        let t = self.t;
        let hyper = self.hyper;
        let moments = &mut self.moments;
        let mut i = 0;
        module.visit_mut("", &mut |name, p| {
            let g = &grads[i];
            i += 1;
            if g.data().iter().all(|&x| x == T::ZERO) {
                return;
            }
            let st = moments.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![T::ZERO; g.numel()],
                v: vec![T::ZERO; g.numel()],
            });
            adam_update(p.data_mut(), g.data(), &mut st.m, &mut st.v, t, lr, hyper);
        });
        Ok(())
    }
}

/// Gradients of `module`'s parameters in visit order; parameters that were
/// not used on the tape get zeros.
pub fn param_grads<T: Float>(module: &dyn Module<T>, grads: &Gradients<T>) -> Vec<Tensor<T>> {
    let mut out = Vec::new();
    module.visit("", &mut |_, p| {
        out.push(grads.wrt(p).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())));
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{DenseLayer, Module};
    use crate::rng::Rng;

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let s = Schedule::new(LR_MIN, LR_MAX, 600).unwrap();
        assert_eq!(s.lr(0).unwrap(), 5e-4);
        assert_eq!(s.lr(600).unwrap(), 5e-6);
        assert!((s.lr(300).unwrap() - 2.525e-4).abs() < 1e-15);
        assert!(s.lr(601).is_err());
    }

    #[test]
    fn first_adam_step_hand_value() {
        let mut p = [0.0f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, 0.1, AdamHyper::default());
        // m̂ = v̂ = 1, so the step is 0.1 / (1 + 1e-8).
        assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-16);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut layer = DenseLayer::<f64>::new(&mut Rng::new(0), 3, 2);
        let before = layer.named_params();
        let mut adam = Adam::new(AdamHyper::default());
        let ones: Vec<_> = before.iter().map(|(_, t)| Tensor::ones(t.shape())).collect();
        adam.step(&mut layer, &ones, 0.01).unwrap();
        let after_one = layer.named_params();
        let zeros: Vec<_> = before.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        adam.step(&mut layer, &zeros, 0.01).unwrap();
        assert_eq!(layer.named_params(), after_one);
        assert_ne!(after_one, before);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut layer = DenseLayer::<f64>::new(&mut Rng::new(0), 3, 2);
        let mut adam = Adam::new(AdamHyper::default());
        let bad = vec![Tensor::zeros(&[3, 2]), Tensor::zeros(&[2])];
        assert!(matches!(adam.step(&mut layer, &bad, 0.1), Err(crate::Error::Dimension(_))));
        assert!(matches!(adam.step(&mut layer, &bad[..1], 0.1), Err(crate::Error::Dimension(_))));
    }
}

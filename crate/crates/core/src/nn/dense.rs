use super::{join, Module};
use crate::autograd::Var;
use crate::error::{dim_err, Result};
use crate::float::Float;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Fully-connected layer `y = x·Wᵀ + b` with `W` stored as out×in.
#[derive(Clone, Debug)]
pub struct DenseLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Float> DenseLayer<T> {
    pub fn new(rng: &mut Rng, inputs: usize, outputs: usize) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        DenseLayer {
            weight: Tensor::from_fn(&[outputs, inputs], |_| {
                T::from_f64(rng.uniform_range(-bound, bound))
            }),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    /// `x` is N×in; returns N×out.
    pub fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.inputs() {
            return dim_err(format!(
                "dense layer expects N×{}, got {shape:?}",
                self.inputs()
            ));
        }
        let tape = x.tape();
        let w = tape.leaf(&self.weight).transpose()?;
        let b = tape.leaf(&self.bias).reshape(&[1, self.outputs()])?;
        x.matmul(w)?.add(b)
    }
}

impl<T: Float> Module<T> for DenseLayer<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

//! Layers built on the tape: dilated convolution, pooling, upsampling,
//! fully-connected layers and their initialization.

mod conv;
mod dense;
mod pool;
mod upsample;

pub use conv::{conv_output_extent, ConvAlgo, Conv2dGeometry, Conv2dLayer, Padding};
pub use dense::DenseLayer;
pub use pool::PoolMode;

use crate::float::Float;
use crate::tensor::Tensor;

/// Anything that owns trainable tensors.
///
/// Parameters are visited in a fixed order under dotted names; that order is
/// the checkpoint order.
pub trait Module<T: Float> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

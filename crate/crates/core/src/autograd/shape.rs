use super::Var;
use crate::error::{contract_err, dim_err, Result};
use crate::float::Float;
use crate::tensor::Tensor;

impl<'t, T: Float> Var<'t, T> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        let value = x.reshape(shape)?;
        Ok(self.tape.record(value, &[self], move |g| {
            vec![Some(g.reshape(&in_shape).unwrap())]
        }))
    }

    /// Concatenates along `axis`, preserving argument order.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let Some(first) = parts.first() else {
            return contract_err("concat of zero tensors");
        };
        for p in parts {
            first.same_tape(p)?;
        }
        let values: Vec<Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return dim_err(format!("concat axis {axis} invalid for rank {}", base.len()));
        }
        for v in &values[1..] {
            let s = v.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return dim_err(format!("concat: {:?} incompatible with {base:?}", s));
            }
        }
        let extents: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();

        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &e) in values.iter().zip(&extents) {
                let chunk = e * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let value = Tensor::new(&shape, out)?;
        Ok(first.tape.record(value, parts, move |g| {
            let mut start = 0;
            extents
                .iter()
                .map(|&e| {
                    let part = g.narrow(axis, start, e).unwrap();
                    start += e;
                    Some(part)
                })
                .collect()
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::autograd::{Tape, Var};
    use crate::error::Error;
    use crate::tensor::Tensor;

    #[test]
    fn concat_channels_and_slice_back() {
        let tape = Tape::<f32>::new();
        let a = Tensor::from_fn(&[1, 3, 2, 2], |i| i as f32);
        let b = Tensor::from_fn(&[1, 5, 2, 2], |i| 100.0 + i as f32);
        let y = Var::concat(&[tape.constant(a.clone()), tape.constant(b.clone())], 1)
            .unwrap()
            .value();
        assert_eq!(y.shape(), &[1, 8, 2, 2]);
        assert_eq!(y.narrow(1, 0, 3).unwrap(), a);
        assert_eq!(y.narrow(1, 3, 5).unwrap(), b);
    }

    #[test]
    fn concat_of_one_is_identity() {
        let tape = Tape::<f32>::new();
        let a = Tensor::from_fn(&[2, 3, 1, 1], |i| i as f32);
        let y = Var::concat(&[tape.constant(a.clone())], 1).unwrap().value();
        assert_eq!(y, a);
    }

    #[test]
    fn concat_zero_and_one_blocks() {
        let tape = Tape::<f32>::new();
        let z = tape.constant(Tensor::zeros(&[1, 2, 3, 3]));
        let o = tape.constant(Tensor::ones(&[1, 2, 3, 3]));
        let y = Var::concat(&[z, o], 1).unwrap().value();
        assert!(y.narrow(1, 0, 2).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(y.narrow(1, 2, 2).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn concat_spatial_mismatch_errors() {
        let tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let b = tape.constant(Tensor::zeros(&[1, 2, 4, 5]));
        assert!(matches!(Var::concat(&[a, b], 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn concat_gradient_splits_blocks() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(&Tensor::ones(&[1, 1, 2]));
        let b = tape.leaf(&Tensor::ones(&[1, 2, 2]));
        let w = tape.constant(Tensor::from_fn(&[1, 3, 2], |i| i as f64));
        let loss = Var::concat(&[a, b], 1).unwrap().mul(w).unwrap().sum_all();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.of(a).unwrap().data(), &[0.0, 1.0]);
        assert_eq!(g.of(b).unwrap().data(), &[2.0, 3.0, 4.0, 5.0]);
    }
}

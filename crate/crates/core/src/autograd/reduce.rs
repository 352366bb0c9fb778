use super::broadcast::for_each_bcast;
use super::Var;
use crate::error::{dim_err, Result};
use crate::float::Float;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

impl<'t, T: Float> Var<'t, T> {
    /// Reduces over `axes`. With `keep_dims` the reduced axes stay as size 1,
    /// otherwise they are removed. Max routes its gradient to the first
    /// maximal element in linear order.
    pub fn reduce(self, op: ReduceOp, axes: &[usize], keep_dims: bool) -> Result<Var<'t, T>> {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        let mut kept = in_shape.clone();
        for &ax in axes {
            if ax >= in_shape.len() {
                return dim_err(format!(
                    "reduce axis {ax} invalid for rank {}",
                    in_shape.len()
                ));
            }
            kept[ax] = 1;
        }
        if in_shape.iter().any(|&d| d == 0) {
            return dim_err(format!("reduce over empty tensor {in_shape:?}"));
        }
        let out_len: usize = kept.iter().product();
        let count = x.numel() / out_len;
        let xd = x.data();

        let mut out = vec![T::ZERO; out_len];
        let mut argmax = Vec::new();
        match op {
            ReduceOp::Sum => {
                // Neumaier-compensated: long reductions (loss sums over
                // every pixel) otherwise drown small perturbations in
                // rounding noise.
                let mut comp = vec![T::ZERO; out_len];
                for_each_bcast(&in_shape, &kept, |i, j| {
                    let (s, c) = neumaier(out[j], comp[j], xd[i]);
                    out[j] = s;
                    comp[j] = c;
                });
                for (o, c) in out.iter_mut().zip(&comp) {
                    *o += *c;
                }
            }
            ReduceOp::Mean => {
                // Each group is summed in sorted order, so the mean of a
                // permuted group is bitwise the same. The attention gates
                // rely on this.
                let mut groups: Vec<Vec<T>> = vec![Vec::with_capacity(count); out_len];
                for_each_bcast(&in_shape, &kept, |i, j| groups[j].push(xd[i]));
                let inv = T::from_f64(1.0 / count as f64);
                for (o, g) in out.iter_mut().zip(&mut groups) {
                    g.sort_by(|a, b| a.to_f64().total_cmp(&b.to_f64()));
                    let (s, c) = g
                        .iter()
                        .fold((T::ZERO, T::ZERO), |(s, c), &v| neumaier(s, c, v));
                    *o = (s + c) * inv;
                }
            }
            ReduceOp::Max => {
                argmax = vec![usize::MAX; out_len];
                for_each_bcast(&in_shape, &kept, |i, j| {
                    // Strict comparison keeps the lowest index on ties.
                    if argmax[j] == usize::MAX || xd[i] > out[j] {
                        out[j] = xd[i];
                        argmax[j] = i;
                    }
                });
            }
        }

        let out_shape: Vec<usize> = if keep_dims {
            kept.clone()
        } else {
            in_shape
                .iter()
                .enumerate()
                .filter(|(d, _)| !axes.contains(d))
                .map(|(_, &e)| e)
                .collect()
        };
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.tape.record(value, &[self], move |g| {
            let gd = g.data();
            let mut gx = vec![T::ZERO; in_shape.iter().product()];
            match op {
                ReduceOp::Sum => for_each_bcast(&in_shape, &kept, |i, j| gx[i] = gd[j]),
                ReduceOp::Mean => {
                    let inv = T::from_f64(1.0 / count as f64);
                    for_each_bcast(&in_shape, &kept, |i, j| gx[i] = gd[j] * inv);
                }
                ReduceOp::Max => {
                    for (j, &i) in argmax.iter().enumerate() {
                        gx[i] += gd[j];
                    }
                }
            }
            vec![Some(Tensor::new(&in_shape, gx).unwrap())]
        }))
    }

    /// Sum of every element as a rank-0 tensor.
    pub fn sum_all(self) -> Var<'t, T> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.reduce(ReduceOp::Sum, &axes, false)
            .expect("all axes are valid")
    }

    pub fn mean_all(self) -> Var<'t, T> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.reduce(ReduceOp::Mean, &axes, false)
            .expect("all axes are valid")
    }
}

/// One compensated addition: returns the new (sum, compensation).
fn neumaier<T: Float>(s: T, c: T, v: T) -> (T, T) {
    let t = s + v;
    let c = c + if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
    (t, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::error::Error;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn mean_of_small_matrix() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let m = x.reduce(ReduceOp::Mean, &[0, 1], false).unwrap().value();
        assert_eq!(m.rank(), 0);
        assert_eq!(m.item().unwrap(), (1.0 + 2.0 + 3.0 + 4.0) / 4.0);
    }

    #[test]
    fn max_of_constant_and_sum_of_zeros() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::full(&[3, 4], 7.25f64));
        assert_eq!(c.reduce(ReduceOp::Max, &[0, 1], false).unwrap().value().item().unwrap(), 7.25);
        let z = tape.constant(Tensor::<f64>::zeros(&[5]));
        assert_eq!(z.sum_all().value().item().unwrap(), 0.0);
    }

    #[test]
    fn keep_dims_and_partial_axes() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[1.0, 5.0, 3.0, 4.0, 2.0, 6.0]));
        let s = x.reduce(ReduceOp::Sum, &[1], true).unwrap().value();
        assert_eq!(s.shape(), &[2, 1]);
        assert_eq!(s.data(), &[9.0, 12.0]);
        let m = x.reduce(ReduceOp::Max, &[0], false).unwrap().value();
        assert_eq!(m.shape(), &[3]);
        assert_eq!(m.data(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn invalid_axis_errors() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(x.reduce(ReduceOp::Sum, &[2], false), Err(Error::Dimension(_))));
    }

    #[test]
    fn max_ties_route_to_lowest_index() {
        let tape = Tape::new();
        let x = tape.leaf(&t(&[4], &[1.0, 3.0, 3.0, 0.0]));
        let m = x.reduce(ReduceOp::Max, &[0], false).unwrap();
        let g = tape.backward(m).unwrap();
        assert_eq!(g.of(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }
}

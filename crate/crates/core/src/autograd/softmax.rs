use super::Var;
use crate::error::{dim_err, Result};
use crate::float::Float;
use crate::tensor::Tensor;

/// Splits a shape into (outer, extent, inner) around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return dim_err(format!("axis {axis} invalid for rank {}", shape.len()));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

/// Max-subtracted softmax over lanes of a strided axis.
pub(crate) fn softmax_buf<T: Float>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |c: usize| (o * len + c) * inner + i;
            let mut max = x[at(0)];
            for c in 1..len {
                max = max.max(x[at(c)]);
            }
            let mut sum = T::ZERO;
            for c in 0..len {
                let e = (x[at(c)] - max).exp();
                out[at(c)] = e;
                sum += e;
            }
            let inv = T::ONE / sum;
            for c in 0..len {
                out[at(c)] *= inv;
            }
        }
    }
    out
}

impl<'t, T: Float> Var<'t, T> {
    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (outer, len, inner) = split_axis(x.shape(), axis)?;
        let y = Tensor::new(x.shape(), softmax_buf(x.data(), outer, len, inner))?;
        let saved = y.clone();
        Ok(self.tape.record(y, &[self], move |g| {
            // dx = y ⊙ (g − Σ_axis g·y)
            let (gd, yd) = (g.data(), saved.data());
            let mut gx = vec![T::ZERO; gd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |c: usize| (o * len + c) * inner + i;
                    let dot: T = (0..len).map(|c| gd[at(c)] * yd[at(c)]).sum();
                    for c in 0..len {
                        gx[at(c)] = yd[at(c)] * (gd[at(c)] - dot);
                    }
                }
            }
            vec![Some(Tensor::new(g.shape(), gx).unwrap())]
        }))
    }

    /// log(softmax(x)) along `axis` via log-sum-exp.
    pub fn log_softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (outer, len, inner) = split_axis(x.shape(), axis)?;
        let xd = x.data();
        let mut out = vec![T::ZERO; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |c: usize| (o * len + c) * inner + i;
                let mut max = xd[at(0)];
                for c in 1..len {
                    max = max.max(xd[at(c)]);
                }
                let sum: T = (0..len).map(|c| (xd[at(c)] - max).exp()).sum();
                let lse = max + sum.ln();
                for c in 0..len {
                    out[at(c)] = xd[at(c)] - lse;
                }
            }
        }
        let y = Tensor::new(x.shape(), out)?;
        let saved = y.clone();
        Ok(self.tape.record(y, &[self], move |g| {
            // dx = g − softmax · Σ_axis g
            let (gd, ld) = (g.data(), saved.data());
            let mut gx = vec![T::ZERO; gd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |c: usize| (o * len + c) * inner + i;
                    let total: T = (0..len).map(|c| gd[at(c)]).sum();
                    for c in 0..len {
                        gx[at(c)] = gd[at(c)] - ld[at(c)].exp() * total;
                    }
                }
            }
            vec![Some(Tensor::new(g.shape(), gx).unwrap())]
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::autograd::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn uniform_logits_give_uniform_probabilities() {
        let tape = Tape::<f64>::new();
        let p = tape
            .constant(Tensor::full(&[1, 14, 2, 2], 0.3))
            .softmax(1)
            .unwrap()
            .value();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 14.0).abs() < 1e-15));
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let tape = Tape::<f32>::new();
        let p = tape
            .constant(Tensor::from_f64(&[2], &[1000.0, 0.0]).unwrap())
            .softmax(0)
            .unwrap()
            .value();
        assert!(p.all_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-6);
        assert!(p.data()[1] < 1e-6);
    }

    #[test]
    fn shift_invariance() {
        let tape = Tape::<f64>::new();
        let x = Tensor::from_fn(&[3, 5], |i| (i as f64 * 0.7).sin() * 4.0);
        let shifted = x.map(|v| v + 123.0);
        let a = tape.constant(x).softmax(1).unwrap().value();
        let b = tape.constant(shifted).softmax(1).unwrap().value();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let tape = Tape::<f64>::new();
        let x = Tensor::from_fn(&[2, 4, 3], |i| (i as f64 * 1.3).cos() * 3.0);
        let ls = tape.constant(x.clone()).log_softmax(1).unwrap().value();
        let s = tape.constant(x).softmax(1).unwrap().value();
        assert!(ls.max_abs_diff(&s.map(f64::ln)).unwrap() < 1e-12);
    }
}

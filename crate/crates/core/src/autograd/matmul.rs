use super::Var;
use crate::error::{dim_err, Result};
use crate::float::Float;
use crate::tensor::Tensor;

/// `C[m×n] = A[m×k] · B[k×n]` on row-major buffers, with optional transposes
/// expressed through strides.
pub(crate) fn gemm<T: Float>(
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::ONE } else { T::ZERO };
    // SAFETY: bounds checked above; `c` is a distinct mutable slice.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::ONE,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<'t, T: Float> Var<'t, T> {
    /// Matrix product of two rank-2 tensors.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
            return dim_err(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                a.shape(),
                b.shape()
            ));
        };
        if k != k2 {
            return dim_err(format!(
                "matmul inner dimensions differ: {:?} · {:?}",
                a.shape(),
                b.shape()
            ));
        }
        let mut out = vec![T::ZERO; m * n];
        gemm(a.data(), false, b.data(), false, &mut out, m, k, n, false);
        let value = Tensor::new(&[m, n], out)?;
        let (need_a, need_b) = (self.requires_grad(), other.requires_grad());
        Ok(self.tape.record(value, &[self, other], move |g| {
            // dA = dC · Bᵀ, dB = Aᵀ · dC
            let ga = need_a.then(|| {
                let mut ga = vec![T::ZERO; m * k];
                gemm(g.data(), false, b.data(), true, &mut ga, m, n, k, false);
                Tensor::new(&[m, k], ga).unwrap()
            });
            let gb = need_b.then(|| {
                let mut gb = vec![T::ZERO; k * n];
                gemm(a.data(), true, g.data(), false, &mut gb, k, m, n, false);
                Tensor::new(&[k, n], gb).unwrap()
            });
            vec![ga, gb]
        }))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let &[r, c] = x.shape() else {
            return dim_err(format!("transpose needs rank 2, got {:?}", x.shape()));
        };
        let value = Tensor::new(&[c, r], transpose_buf(x.data(), r, c))?;
        Ok(self.tape.record(value, &[self], move |g| {
            vec![Some(Tensor::new(&[r, c], transpose_buf(g.data(), c, r)).unwrap())]
        }))
    }
}

fn transpose_buf<T: Float>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = src[i * cols + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use crate::autograd::Tape;
    use crate::error::Error;
    use crate::tensor::Tensor;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn identity_times_matrix() {
        let tape = Tape::new();
        let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(i.matmul(m).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn row_times_column() {
        let tape = Tape::new();
        let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        // 1·3 + 2·4
        assert_eq!(a.matmul(b).unwrap().value().data(), &[11.0]);
    }

    #[test]
    fn zeros_annihilate() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::<f64>::zeros(&[2, 3]));
        let b = tape.constant(Tensor::from_fn(&[3, 4], |i| i as f64 + 1.0));
        let c = z.matmul(b).unwrap().value();
        assert_eq!(c.shape(), &[2, 4]);
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inner_mismatch_errors() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(a.matmul(b), Err(Error::Dimension(_))));
    }

    #[test]
    fn transpose_swaps_axes() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let at = a.transpose().unwrap().value();
        assert_eq!(at.shape(), &[3, 2]);
        assert_eq!(at.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }
}

use crate::autograd::Var;
use crate::error::{contract_err, dim_err, Result};
use crate::float::Float;
use crate::tensor::Tensor;

/// Source taps for one output coordinate under half-pixel (unaligned
/// corners) sampling: position `(o + 0.5) / f - 0.5`, clamped at the edges.
#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    w_hi: f64,
}

fn taps(extent: usize, factor: usize) -> Vec<Tap> {
    (0..extent * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(extent - 1);
            let hi = (lo + 1).min(extent - 1);
            Tap {
                lo,
                hi,
                w_hi: src - lo as f64,
            }
        })
        .collect()
}

impl<'t, T: Float> Var<'t, T> {
    /// Bilinear upsampling of N×C×H×W by an integer factor.
    pub fn upsample_bilinear(self, factor: usize) -> Result<Var<'t, T>> {
        if factor < 1 {
            return contract_err("upsample factor must be ≥ 1");
        }
        let x = self.value();
        let &[n, c, h, w] = x.shape() else {
            return dim_err(format!("upsample expects N×C×H×W, got {:?}", x.shape()));
        };
        if h == 0 || w == 0 {
            return dim_err("upsample of empty extent");
        }
        let (ho, wo) = (h * factor, w * factor);
        let (ty, tx) = (taps(h, factor), taps(w, factor));
        let xd = x.data();
        let mut out = vec![T::ZERO; n * c * ho * wo];
        for p in 0..n * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for (oy, a) in ty.iter().enumerate() {
                let (wy1, wy0) = (T::from_f64(a.w_hi), T::from_f64(1.0 - a.w_hi));
                for (ox, b) in tx.iter().enumerate() {
                    let (wx1, wx0) = (T::from_f64(b.w_hi), T::from_f64(1.0 - b.w_hi));
                    let top = src[a.lo * w + b.lo] * wx0 + src[a.lo * w + b.hi] * wx1;
                    let bot = src[a.hi * w + b.lo] * wx0 + src[a.hi * w + b.hi] * wx1;
                    dst[oy * wo + ox] = top * wy0 + bot * wy1;
                }
            }
        }
        let value = Tensor::new(&[n, c, ho, wo], out)?;
        Ok(self.tape().record(value, &[self], move |g| {
            let gd = g.data();
            let mut gx = vec![T::ZERO; n * c * h * w];
            for p in 0..n * c {
                let src = &gd[p * ho * wo..(p + 1) * ho * wo];
                let dst = &mut gx[p * h * w..(p + 1) * h * w];
                for (oy, a) in ty.iter().enumerate() {
                    let (wy1, wy0) = (T::from_f64(a.w_hi), T::from_f64(1.0 - a.w_hi));
                    for (ox, b) in tx.iter().enumerate() {
                        let (wx1, wx0) = (T::from_f64(b.w_hi), T::from_f64(1.0 - b.w_hi));
                        let v = src[oy * wo + ox];
                        dst[a.lo * w + b.lo] += v * wy0 * wx0;
                        dst[a.lo * w + b.hi] += v * wy0 * wx1;
                        dst[a.hi * w + b.lo] += v * wy1 * wx0;
                        dst[a.hi * w + b.hi] += v * wy1 * wx1;
                    }
                }
            }
            vec![Some(Tensor::new(&[n, c, h, w], gx).unwrap())]
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::autograd::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn constant_stays_constant() {
        let tape = Tape::new();
        for f in 1..5 {
            let y = tape
                .constant(Tensor::<f64>::full(&[1, 2, 3, 5], 5.0))
                .upsample_bilinear(f)
                .unwrap()
                .value();
            assert_eq!(y.shape(), &[1, 2, 3 * f, 5 * f]);
            assert!(y.data().iter().all(|&v| (v - 5.0).abs() < 1e-12));
        }
    }

    #[test]
    fn factor_one_is_identity() {
        let tape = Tape::new();
        let x = Tensor::from_fn(&[1, 1, 4, 3], |i| i as f64 * 0.5);
        assert_eq!(tape.constant(x.clone()).upsample_bilinear(1).unwrap().value(), x);
    }

    #[test]
    fn single_pixel_replicates() {
        let tape = Tape::new();
        let y = tape
            .constant(Tensor::<f64>::full(&[1, 1, 1, 1], 2.5))
            .upsample_bilinear(2)
            .unwrap()
            .value();
        assert_eq!(y.data(), &[2.5; 4]);
    }

    #[test]
    fn factor_zero_rejected() {
        let tape = Tape::<f64>::new();
        assert!(tape.constant(Tensor::zeros(&[1, 1, 2, 2])).upsample_bilinear(0).is_err());
    }

    #[test]
    fn half_pixel_interior_values() {
        // 1-D ramp [0, 4] upsampled ×2 samples at -0.25 (clamped), 0.25, 0.75, 1.25 (clamped).
        let tape = Tape::<f64>::new();
        let y = tape
            .constant(Tensor::from_f64(&[1, 1, 1, 2], &[0.0, 4.0]).unwrap())
            .upsample_bilinear(2)
            .unwrap()
            .value();
        // The single row is replicated vertically.
        assert_eq!(y.data(), &[0.0, 1.0, 3.0, 4.0, 0.0, 1.0, 3.0, 4.0]);
    }
}

use rayon::prelude::*;

use super::{join, Module};
use crate::autograd::{Tape, Var};
use crate::error::{contract_err, dim_err, Result};
use crate::float::Float;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// How zero padding is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// `dilation * (k - 1) / 2`, which preserves extent at stride 1.
    Same,
    Explicit(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Conv2dGeometry {
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Conv2dGeometry {
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
            dilation,
        }
    }
}

/// Which kernel evaluates the convolution. Both produce the same values to
/// rounding; `Im2col` is the fast path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConvAlgo {
    Direct,
    #[default]
    Im2col,
}

/// `floor((extent + 2p - d(k-1) - 1) / s) + 1`, or an error when the dilated
/// kernel does not fit in the padded input.
pub fn conv_output_extent(extent: usize, kernel: usize, g: Conv2dGeometry) -> Result<usize> {
    let span = g.dilation * (kernel - 1) + 1;
    let padded = extent + 2 * g.padding;
    if span > padded {
        return dim_err(format!(
            "dilated kernel span {span} exceeds padded input extent {padded}"
        ));
    }
    Ok((padded - span) / g.stride + 1)
}

#[derive(Clone, Copy)]
struct Dims {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    g: Conv2dGeometry,
}

impl Dims {
    fn k(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
    fn l(&self) -> usize {
        self.ho * self.wo
    }
    /// Input coordinate read by output `o` through tap `t`, if inside.
    #[inline]
    fn src(o: usize, t: usize, stride: usize, dil: usize, pad: usize, extent: usize) -> Option<usize> {
        let p = (o * stride + t * dil) as isize - pad as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }
}

fn im2col<T: Float>(x: &[T], d: &Dims, col: &mut [T]) {
    let l = d.l();
    let g = d.g;
    for c in 0..d.c_in {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = ((c * d.kh + ky) * d.kw + kx) * l;
                for oy in 0..d.ho {
                    let dst = &mut col[row + oy * d.wo..row + (oy + 1) * d.wo];
                    match Dims::src(oy, ky, g.stride, g.dilation, g.padding, d.h) {
                        None => dst.fill(T::ZERO),
                        Some(iy) => {
                            for (ox, v) in dst.iter_mut().enumerate() {
                                *v = match Dims::src(ox, kx, g.stride, g.dilation, g.padding, d.w) {
                                    Some(ix) => plane[iy * d.w + ix],
                                    None => T::ZERO,
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Float>(col: &[T], d: &Dims, x: &mut [T]) {
    let l = d.l();
    let g = d.g;
    for c in 0..d.c_in {
        let plane = &mut x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = ((c * d.kh + ky) * d.kw + kx) * l;
                for oy in 0..d.ho {
                    let Some(iy) = Dims::src(oy, ky, g.stride, g.dilation, g.padding, d.h) else {
                        continue;
                    };
                    for ox in 0..d.wo {
                        if let Some(ix) = Dims::src(ox, kx, g.stride, g.dilation, g.padding, d.w) {
                            plane[iy * d.w + ix] += col[row + oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Float>(out: &mut [T], bias: Option<&[T]>, c_out: usize, l: usize) {
    if let Some(b) = bias {
        for co in 0..c_out {
            out[co * l..(co + 1) * l].iter_mut().for_each(|v| *v += b[co]);
        }
    }
}

fn im2col_forward<T: Float>(x: &[T], w: &[T], bias: Option<&[T]>, d: &Dims) -> (Vec<T>, Vec<T>) {
    let (k, l) = (d.k(), d.l());
    let in_len = d.c_in * d.h * d.w;
    let mut cols = vec![T::ZERO; d.n * k * l];
    let mut out = vec![T::ZERO; d.n * d.c_out * l];
    out.par_chunks_mut(d.c_out * l)
        .zip(cols.par_chunks_mut(k * l))
        .enumerate()
        .for_each(|(n, (out_n, col))| {
            im2col(&x[n * in_len..(n + 1) * in_len], d, col);
            crate::autograd::gemm(w, false, col, false, out_n, d.c_out, k, l, false);
            add_bias(out_n, bias, d.c_out, l);
        });
    (out, cols)
}

/// Returns (dx, dw, db) from cached im2col buffers.
fn im2col_backward<T: Float>(
    g: &[T],
    w: &[T],
    cols: &[T],
    d: &Dims,
    need_x: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let (k, l) = (d.k(), d.l());
    let in_len = d.c_in * d.h * d.w;
    let out_len = d.c_out * l;

    // Per-image partials reduced in image order, so the result does not
    // depend on the thread count.
    let partials: Vec<Vec<T>> = (0..d.n)
        .into_par_iter()
        .map(|n| {
            let mut dw = vec![T::ZERO; d.c_out * k];
            crate::autograd::gemm(
                &g[n * out_len..(n + 1) * out_len],
                false,
                &cols[n * k * l..(n + 1) * k * l],
                true,
                &mut dw,
                d.c_out,
                l,
                k,
                false,
            );
            dw
        })
        .collect();
    let mut dw = vec![T::ZERO; d.c_out * k];
    for p in &partials {
        dw.iter_mut().zip(p).for_each(|(a, &b)| *a += b);
    }

    let mut db = vec![T::ZERO; d.c_out];
    for n in 0..d.n {
        for (co, acc) in db.iter_mut().enumerate() {
            let base = n * out_len + co * l;
            *acc += g[base..base + l].iter().copied().sum::<T>();
        }
    }

    let dx = need_x.then(|| {
        let mut dx = vec![T::ZERO; d.n * in_len];
        dx.par_chunks_mut(in_len).enumerate().for_each(|(n, dx_n)| {
            let mut dcol = vec![T::ZERO; k * l];
            crate::autograd::gemm(
                w,
                true,
                &g[n * out_len..(n + 1) * out_len],
                false,
                &mut dcol,
                k,
                d.c_out,
                l,
                false,
            );
            col2im(&dcol, d, dx_n);
        });
        dx
    });
    (dx, dw, db)
}

fn direct_forward<T: Float>(x: &[T], w: &[T], bias: Option<&[T]>, d: &Dims) -> Vec<T> {
    let l = d.l();
    let g = d.g;
    let mut out = vec![T::ZERO; d.n * d.c_out * l];
    out.par_chunks_mut(d.c_out * l).enumerate().for_each(|(n, out_n)| {
        let xn = &x[n * d.c_in * d.h * d.w..];
        for co in 0..d.c_out {
            let plane = &mut out_n[co * l..(co + 1) * l];
            // Tap-major order keeps the innermost loop on a contiguous row.
            for ci in 0..d.c_in {
                let xin = &xn[ci * d.h * d.w..(ci + 1) * d.h * d.w];
                for ky in 0..d.kh {
                    for kx in 0..d.kw {
                        let wv = w[((co * d.c_in + ci) * d.kh + ky) * d.kw + kx];
                        for oy in 0..d.ho {
                            let Some(iy) = Dims::src(oy, ky, g.stride, g.dilation, g.padding, d.h)
                            else {
                                continue;
                            };
                            let row = &mut plane[oy * d.wo..(oy + 1) * d.wo];
                            for (ox, acc) in row.iter_mut().enumerate() {
                                if let Some(ix) =
                                    Dims::src(ox, kx, g.stride, g.dilation, g.padding, d.w)
                                {
                                    *acc += wv * xin[iy * d.w + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
        add_bias(out_n, bias, d.c_out, l);
    });
    out
}

fn direct_backward<T: Float>(
    g_out: &[T],
    x: &[T],
    w: &[T],
    d: &Dims,
    need_x: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let l = d.l();
    let g = d.g;
    let mut dx = vec![T::ZERO; x.len()];
    let mut dw = vec![T::ZERO; w.len()];
    let mut db = vec![T::ZERO; d.c_out];
    for n in 0..d.n {
        for co in 0..d.c_out {
            let go = &g_out[(n * d.c_out + co) * l..(n * d.c_out + co + 1) * l];
            db[co] += go.iter().copied().sum::<T>();
            for ci in 0..d.c_in {
                let base = (n * d.c_in + ci) * d.h * d.w;
                for ky in 0..d.kh {
                    for kx in 0..d.kw {
                        let widx = ((co * d.c_in + ci) * d.kh + ky) * d.kw + kx;
                        let mut acc = T::ZERO;
                        for oy in 0..d.ho {
                            let Some(iy) = Dims::src(oy, ky, g.stride, g.dilation, g.padding, d.h)
                            else {
                                continue;
                            };
                            for ox in 0..d.wo {
                                if let Some(ix) =
                                    Dims::src(ox, kx, g.stride, g.dilation, g.padding, d.w)
                                {
                                    let gv = go[oy * d.wo + ox];
                                    acc += gv * x[base + iy * d.w + ix];
                                    dx[base + iy * d.w + ix] += gv * w[widx];
                                }
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (need_x.then_some(dx), dw, db)
}

impl<'t, T: Float> Var<'t, T> {
    /// 2-D cross-correlation of `self` (N×C_in×H×W) with `weight`
    /// (C_out×C_in×kh×kw), zero padding, optional bias (C_out).
    pub fn conv2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        geometry: Conv2dGeometry,
        algo: ConvAlgo,
    ) -> Result<Var<'t, T>> {
        self.same_tape(&weight)?;
        let x = self.value();
        let w = weight.value();
        let (&[n, c_in, h, wd], &[c_out, wc_in, kh, kw]) = (x.shape(), w.shape()) else {
            return dim_err(format!(
                "conv2d needs N×C×H×W input and O×I×kh×kw weight, got {:?} and {:?}",
                x.shape(),
                w.shape()
            ));
        };
        if c_in != wc_in {
            return dim_err(format!(
                "conv2d channel mismatch: input has {c_in}, weight expects {wc_in}"
            ));
        }
        if geometry.stride == 0 || geometry.dilation == 0 {
            return contract_err("conv2d stride and dilation must be ≥ 1");
        }
        let b = match bias {
            Some(bv) => {
                self.same_tape(&bv)?;
                let b = bv.value();
                if b.shape() != [c_out] {
                    return dim_err(format!("conv2d bias shape {:?}, expected [{c_out}]", b.shape()));
                }
                Some(b)
            }
            None => None,
        };
        let ho = conv_output_extent(h, kh, geometry)?;
        let wo = conv_output_extent(wd, kw, geometry)?;
        let d = Dims {
            n,
            c_in,
            h,
            w: wd,
            c_out,
            kh,
            kw,
            ho,
            wo,
            g: geometry,
        };
        let bias_data = b.as_ref().map(|b| b.data());
        let need_x = self.requires_grad();
        let out_shape = [n, c_out, ho, wo];

        let mut parents = vec![self, weight];
        if let Some(bv) = bias {
            parents.push(bv);
        }
        let has_bias = bias.is_some();
        let finish = move |dx: Option<Vec<T>>, dw: Vec<T>, db: Vec<T>| {
            let mut grads = vec![
                dx.map(|v| Tensor::new(&[n, c_in, h, wd], v).unwrap()),
                Some(Tensor::new(&[c_out, c_in, kh, kw], dw).unwrap()),
            ];
            if has_bias {
                grads.push(Some(Tensor::new(&[c_out], db).unwrap()));
            }
            grads
        };

        match algo {
            ConvAlgo::Im2col => {
                let (out, cols) = im2col_forward(x.data(), w.data(), bias_data, &d);
                let value = Tensor::new(&out_shape, out)?;
                Ok(self.tape().record(value, &parents, move |g| {
                    let (dx, dw, db) = im2col_backward(g.data(), w.data(), &cols, &d, need_x);
                    finish(dx, dw, db)
                }))
            }
            ConvAlgo::Direct => {
                let out = direct_forward(x.data(), w.data(), bias_data, &d);
                let value = Tensor::new(&out_shape, out)?;
                Ok(self.tape().record(value, &parents, move |g| {
                    let (dx, dw, db) = direct_backward(g.data(), x.data(), w.data(), &d, need_x);
                    finish(dx, dw, db)
                }))
            }
        }
    }
}

/// Square-kernel convolution layer with optional bias.
#[derive(Clone, Debug)]
pub struct Conv2dLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub geometry: Conv2dGeometry,
    pub algo: ConvAlgo,
}

impl<T: Float> Conv2dLayer<T> {
    /// He-uniform weights in `±sqrt(6 / fan_in)`, zero bias.
    pub fn new(
        rng: &mut Rng,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        padding: Padding,
        bias: bool,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 || dilation == 0 {
            return contract_err("kernel, stride and dilation must be ≥ 1");
        }
        let padding = match padding {
            Padding::Same => {
                if kernel % 2 == 0 {
                    return contract_err(format!("same padding needs an odd kernel, got {kernel}"));
                }
                dilation * (kernel - 1) / 2
            }
            Padding::Explicit(p) => p,
        };
        let fan_in = c_in * kernel * kernel;
        let bound = (6.0 / fan_in as f64).sqrt();
        let weight = Tensor::from_fn(&[c_out, c_in, kernel, kernel], |_| {
            T::from_f64(rng.uniform_range(-bound, bound))
        });
        Ok(Conv2dLayer {
            weight,
            bias: bias.then(|| Tensor::zeros(&[c_out])),
            geometry: Conv2dGeometry {
                stride,
                padding,
                dilation,
            },
            algo: ConvAlgo::default(),
        })
    }

    /// Stride-1 "same" convolution.
    pub fn same(rng: &mut Rng, c_in: usize, c_out: usize, kernel: usize, dilation: usize) -> Result<Self> {
        Self::new(rng, c_in, c_out, kernel, 1, dilation, Padding::Same, true)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let tape: &'t Tape<T> = x.tape();
        let w = tape.leaf(&self.weight);
        let b = self.bias.as_ref().map(|b| tape.leaf(b));
        x.conv2d(w, b, self.geometry, self.algo)
    }
}

impl<T: Float> Module<T> for Conv2dLayer<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

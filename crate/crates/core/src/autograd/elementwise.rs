use super::broadcast::{for_each_bcast2, sum_to_shape};
use super::Var;
use crate::error::{Error, Result};
use crate::float::Float;
use crate::tensor::{broadcast_shape, Tensor};

/// Elementwise operation selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Relu,
    Sigmoid,
}

fn binary_forward<T: Float>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<(Vec<usize>, Vec<T>)> {
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let out = if a.shape() == b.shape() {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else {
        let mut out = vec![T::ZERO; out_shape.iter().product()];
        for_each_bcast2(&out_shape, a.shape(), b.shape(), |i, ja, jb| {
            out[i] = f(ad[ja], bd[jb]);
        });
        out
    };
    Ok((out_shape, out))
}

/// Evaluates `f(g, a, b)` at every output position, then sums back to the
/// shape of the operand the gradient belongs to.
fn binary_grad<T: Float>(
    g: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    target: &[usize],
    f: impl Fn(T, T, T) -> T,
) -> Tensor<T> {
    let out_shape = g.shape();
    let (gd, ad, bd) = (g.data(), a.data(), b.data());
    let mut full = vec![T::ZERO; gd.len()];
    for_each_bcast2(out_shape, a.shape(), b.shape(), |i, ja, jb| {
        full[i] = f(gd[i], ad[ja], bd[jb]);
    });
    Tensor::new(target, sum_to_shape(&full, out_shape, target)).expect("gradient shape")
}

impl<'t, T: Float> Var<'t, T> {
    /// Dispatches on [`ElementwiseOp`]; unary ops ignore `other`.
    pub fn elementwise(self, op: ElementwiseOp, other: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let need = || {
            other.ok_or_else(|| Error::Contract(format!("{op:?} needs a second operand")))
        };
        match op {
            ElementwiseOp::Add => self.add(need()?),
            ElementwiseOp::Sub => self.sub(need()?),
            ElementwiseOp::Mul => self.mul(need()?),
            ElementwiseOp::Div => self.div(need()?),
            ElementwiseOp::Relu => Ok(self.relu()),
            ElementwiseOp::Sigmoid => Ok(self.sigmoid()),
        }
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let (shape, out) = binary_forward(&a, &b, |x, y| x + y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let value = Tensor::new(&shape, out)?;
        Ok(self.tape.record(value, &[self, other], move |g| {
            let ga = Tensor::new(&sa, sum_to_shape(g.data(), g.shape(), &sa)).unwrap();
            let gb = Tensor::new(&sb, sum_to_shape(g.data(), g.shape(), &sb)).unwrap();
            vec![Some(ga), Some(gb)]
        }))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let (shape, out) = binary_forward(&a, &b, |x, y| x - y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let value = Tensor::new(&shape, out)?;
        Ok(self.tape.record(value, &[self, other], move |g| {
            let ga = Tensor::new(&sa, sum_to_shape(g.data(), g.shape(), &sa)).unwrap();
            let neg: Vec<T> = g.data().iter().map(|&v| -v).collect();
            let gb = Tensor::new(&sb, sum_to_shape(&neg, g.shape(), &sb)).unwrap();
            vec![Some(ga), Some(gb)]
        }))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let (shape, out) = binary_forward(&a, &b, |x, y| x * y)?;
        let value = Tensor::new(&shape, out)?;
        let (need_a, need_b) = (self.requires_grad(), other.requires_grad());
        Ok(self.tape.record(value, &[self, other], move |g| {
            let ga = need_a.then(|| binary_grad(g, &a, &b, a.shape(), |g, _, y| g * y));
            let gb = need_b.then(|| binary_grad(g, &a, &b, b.shape(), |g, x, _| g * x));
            vec![ga, gb]
        }))
    }

    /// Elementwise quotient; any exact zero in the divisor is an error.
    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        if let Some(pos) = b.data().iter().position(|&v| v == T::ZERO) {
            return Err(Error::Numeric(format!(
                "division by exact zero at divisor index {pos}"
            )));
        }
        let (shape, out) = binary_forward(&a, &b, |x, y| x / y)?;
        let value = Tensor::new(&shape, out)?;
        let (need_a, need_b) = (self.requires_grad(), other.requires_grad());
        Ok(self.tape.record(value, &[self, other], move |g| {
            let ga = need_a.then(|| binary_grad(g, &a, &b, a.shape(), |g, _, y| g / y));
            let gb = need_b.then(|| binary_grad(g, &a, &b, b.shape(), |g, x, y| -g * x / (y * y)));
            vec![ga, gb]
        }))
    }

    fn unary(
        self,
        f: impl Fn(T) -> T,
        // Derivative expressed through the input `x` and output `y`.
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var<'t, T> {
        let x = self.value();
        let y = x.map(f);
        let saved_y = y.clone();
        self.tape.record(y, &[self], move |g| {
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .zip(saved_y.data())
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(Tensor::new(g.shape(), data).unwrap())]
        })
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(
            |x| if x > T::ZERO { x } else { T::ZERO },
            |x, _| if x > T::ZERO { T::ONE } else { T::ZERO },
        )
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(Float::sigmoid, |_, y| y * (T::ONE - y))
    }

    pub fn exp(self) -> Var<'t, T> {
        self.unary(Float::exp, |_, y| y)
    }

    /// Natural log; non-positive inputs are an error.
    pub fn ln(self) -> Result<Var<'t, T>> {
        if let Some(pos) = self.value().data().iter().position(|&v| v <= T::ZERO) {
            return Err(Error::Numeric(format!("log of non-positive value at index {pos}")));
        }
        Ok(self.unary(Float::ln, |x, _| T::ONE / x))
    }

    pub fn neg(self) -> Var<'t, T> {
        self.unary(|x| -x, |_, _| -T::ONE)
    }

    pub fn scale(self, c: f64) -> Var<'t, T> {
        let c = T::from_f64(c);
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t, T> {
        let c = T::from_f64(c);
        self.unary(move |x| x + c, |_, _| T::ONE)
    }
}

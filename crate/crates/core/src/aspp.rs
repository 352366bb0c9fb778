//! Atrous spatial pyramid pooling: the densely connected variant, the
//! classic parallel variant, and receptive-field arithmetic for both.

use crate::autograd::{ReduceOp, Var};
use crate::error::{contract_err, dim_err, Result};
use crate::float::Float;
use crate::nn::{join, Conv2dLayer, Module};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DENSE_RATES: [usize; 4] = [3, 6, 12, 18];
pub const PLAIN_RATES: [usize; 3] = [6, 12, 18];
pub const BRANCH_KERNEL: usize = 3;

/// Receptive field of a stride-1 chain of odd square kernels:
/// `1 + Σ dᵢ·(kᵢ − 1)`.
pub fn receptive_field(chain: &[(usize, usize)]) -> Result<usize> {
    let mut rf = 1;
    for &(k, d) in chain {
        if k % 2 == 0 {
            return contract_err(format!("receptive field needs odd kernels, got {k}"));
        }
        if d == 0 {
            return contract_err("dilation must be ≥ 1");
        }
        rf += d * (k - 1);
    }
    Ok(rf)
}

/// One pyramid branch: 1×1 bottleneck to `inter` channels, then a 3×3
/// convolution at the branch's dilation rate to `growth` channels, each
/// followed by ReLU.
#[derive(Clone, Debug)]
pub struct AsppBranch<T> {
    pub reduce: Conv2dLayer<T>,
    pub dilated: Conv2dLayer<T>,
}

impl<T: Float> AsppBranch<T> {
    pub fn new(rng: &mut Rng, c_in: usize, inter: usize, growth: usize, rate: usize) -> Result<Self> {
        Ok(AsppBranch {
            reduce: Conv2dLayer::same(rng, c_in, inter, 1, 1)?,
            dilated: Conv2dLayer::same(rng, inter, growth, BRANCH_KERNEL, rate)?,
        })
    }

    pub fn rate(&self) -> usize {
        self.dilated.geometry.dilation
    }

    pub fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.reduce.forward(x)?.relu();
        Ok(self.dilated.forward(h)?.relu())
    }
}

impl<T: Float> Module<T> for AsppBranch<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.reduce.visit(&join(prefix, "reduce"), f);
        self.dilated.visit(&join(prefix, "dilated"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.reduce.visit_mut(&join(prefix, "reduce"), f);
        self.dilated.visit_mut(&join(prefix, "dilated"), f);
    }
}

/// Densely connected pyramid: layer `l` sees `[F₀, F₁, …, F_{l−1}]` with
/// `F₀ = x`, and the projection sees all of `F₀…F_L`.
#[derive(Clone, Debug)]
pub struct DenseAsppBlock<T> {
    pub layers: Vec<AsppBranch<T>>,
    pub project: Conv2dLayer<T>,
    in_channels: usize,
    growth: usize,
}

impl<T: Float> DenseAsppBlock<T> {
    pub fn new(
        rng: &mut Rng,
        c_in: usize,
        inter: usize,
        growth: usize,
        c_out: usize,
        rates: &[usize],
    ) -> Result<Self> {
        if rates.is_empty() || rates.contains(&0) {
            return contract_err(format!("dense ASPP rates must be non-empty and ≥ 1: {rates:?}"));
        }
        let layers = rates
            .iter()
            .enumerate()
            .map(|(l, &d)| AsppBranch::new(rng, c_in + l * growth, inter, growth, d))
            .collect::<Result<Vec<_>>>()?;
        let project = Conv2dLayer::same(rng, c_in + rates.len() * growth, c_out, 1, 1)?;
        let block = DenseAsppBlock {
            layers,
            project,
            in_channels: c_in,
            growth,
        };
        block.check_widths()?;
        Ok(block)
    }

    /// Verifies the dense-concatenation channel arithmetic.
    pub fn check_widths(&self) -> Result<()> {
        for (l, layer) in self.layers.iter().enumerate() {
            let expect = self.in_channels + l * self.growth;
            if layer.reduce.in_channels() != expect || layer.dilated.out_channels() != self.growth {
                return dim_err(format!(
                    "dense layer {l} consumes {} channels, expected {expect}",
                    layer.reduce.in_channels()
                ));
            }
        }
        if self.project.in_channels() != self.pre_projection_channels() {
            return dim_err("projection width does not match dense concatenation");
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.project.out_channels()
    }

    pub fn rates(&self) -> Vec<usize> {
        self.layers.iter().map(AsppBranch::rate).collect()
    }

    pub fn pre_projection_channels(&self) -> usize {
        self.in_channels + self.layers.len() * self.growth
    }

    /// `[F₀, F₁, …, F_L]`.
    pub fn features<'t>(&self, x: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.in_channels {
            return dim_err(format!(
                "dense ASPP expects {} input channels, got {shape:?}",
                self.in_channels
            ));
        }
        let mut feats = vec![x];
        for layer in &self.layers {
            let input = Var::concat(&feats, 1)?;
            feats.push(layer.forward(input)?);
        }
        Ok(feats)
    }

    pub fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let feats = self.features(x)?;
        self.project.forward(Var::concat(&feats, 1)?)
    }
}

impl<T: Float> Module<T> for DenseAsppBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{i}")), f);
        }
        self.project.visit(&join(prefix, "project"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layer{i}")), f);
        }
        self.project.visit_mut(&join(prefix, "project"), f);
    }
}

/// Parallel pyramid: a 1×1 branch, one dilated branch per rate and an
/// image-pooling branch, all reading the same input.
#[derive(Clone, Debug)]
pub struct PlainAsppBlock<T> {
    pub pointwise: Conv2dLayer<T>,
    pub branches: Vec<AsppBranch<T>>,
    pub pooling: Conv2dLayer<T>,
    pub project: Conv2dLayer<T>,
}

impl<T: Float> PlainAsppBlock<T> {
    pub fn new(
        rng: &mut Rng,
        c_in: usize,
        inter: usize,
        growth: usize,
        c_out: usize,
        rates: &[usize],
    ) -> Result<Self> {
        if rates.is_empty() || rates.contains(&0) {
            return contract_err(format!("ASPP rates must be non-empty and ≥ 1: {rates:?}"));
        }
        let pointwise = Conv2dLayer::same(rng, c_in, growth, 1, 1)?;
        let branches = rates
            .iter()
            .map(|&d| AsppBranch::new(rng, c_in, inter, growth, d))
            .collect::<Result<Vec<_>>>()?;
        let pooling = Conv2dLayer::same(rng, c_in, growth, 1, 1)?;
        let project = Conv2dLayer::same(rng, (rates.len() + 2) * growth, c_out, 1, 1)?;
        Ok(PlainAsppBlock {
            pointwise,
            branches,
            pooling,
            project,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.pointwise.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.project.out_channels()
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len() + 2
    }

    pub fn pre_projection_channels(&self) -> usize {
        self.project.in_channels()
    }

    /// Branch outputs in order: 1×1, each dilated rate, image pooling.
    pub fn branch_features<'t>(&self, x: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.in_channels() {
            return dim_err(format!(
                "ASPP expects {} input channels, got {shape:?}",
                self.in_channels()
            ));
        }
        let mut out = vec![self.pointwise.forward(x)?.relu()];
        for b in &self.branches {
            out.push(b.forward(x)?);
        }
        let pooled = x.reduce(ReduceOp::Mean, &[2, 3], true)?;
        let pooled = self.pooling.forward(pooled)?.relu();
        let spread = x.tape().constant(Tensor::ones(&[1, 1, shape[2], shape[3]]));
        out.push(pooled.mul(spread)?);
        Ok(out)
    }

    pub fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let feats = self.branch_features(x)?;
        self.project.forward(Var::concat(&feats, 1)?)
    }
}

impl<T: Float> Module<T> for PlainAsppBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.pointwise.visit(&join(prefix, "pointwise"), f);
        for (i, b) in self.branches.iter().enumerate() {
            b.visit(&join(prefix, &format!("branch{i}")), f);
        }
        self.pooling.visit(&join(prefix, "pooling"), f);
        self.project.visit(&join(prefix, "project"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.pointwise.visit_mut(&join(prefix, "pointwise"), f);
        for (i, b) in self.branches.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("branch{i}")), f);
        }
        self.pooling.visit_mut(&join(prefix, "pooling"), f);
        self.project.visit_mut(&join(prefix, "project"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    #[test]
    fn single_branch_fields() {
        assert_eq!(receptive_field(&[(3, 6)]).unwrap(), 13);
        assert_eq!(receptive_field(&[(3, 12)]).unwrap(), 25);
        assert_eq!(receptive_field(&[(3, 18)]).unwrap(), 37);
        assert_eq!(receptive_field(&[(3, 1)]).unwrap(), 3);
    }

    #[test]
    fn chained_six_then_twelve_matches_largest_plain_branch() {
        let chained = receptive_field(&[(3, 6), (3, 12)]).unwrap();
        let widest = PLAIN_RATES
            .iter()
            .map(|&d| receptive_field(&[(3, d)]).unwrap())
            .max()
            .unwrap();
        assert_eq!(chained, 37);
        assert_eq!(chained, widest);
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(matches!(
            receptive_field(&[(4, 1)]),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn dense_widths_follow_concatenation() {
        let mut rng = Rng::new(0);
        let block = DenseAsppBlock::<f32>::new(&mut rng, 512, 8, 64, 16, &DENSE_RATES).unwrap();
        assert_eq!(block.pre_projection_channels(), 512 + 4 * 64);
        for (l, layer) in block.layers.iter().enumerate() {
            assert_eq!(layer.reduce.in_channels(), 512 + l * 64);
        }
        assert_eq!(block.rates(), vec![3, 6, 12, 18]);
    }

    #[test]
    fn plain_widths() {
        let mut rng = Rng::new(0);
        let block = PlainAsppBlock::<f32>::new(&mut rng, 16, 8, 10, 12, &PLAIN_RATES).unwrap();
        assert_eq!(block.branch_count(), 5);
        assert_eq!(block.pre_projection_channels(), 5 * 10);
    }

    #[test]
    fn spatial_size_preserved() {
        let mut rng = Rng::new(1);
        let dense = DenseAsppBlock::<f32>::new(&mut rng, 4, 4, 2, 3, &DENSE_RATES).unwrap();
        let plain = PlainAsppBlock::<f32>::new(&mut rng, 4, 4, 2, 3, &PLAIN_RATES).unwrap();
        let tape = Tape::no_grad();
        let x = tape.constant(Tensor::from_fn(&[1, 4, 32, 32], |i| (i as f32 * 0.01).sin()));
        assert_eq!(dense.forward(x).unwrap().shape(), vec![1, 3, 32, 32]);
        assert_eq!(plain.forward(x).unwrap().shape(), vec![1, 3, 32, 32]);
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mut rng = Rng::new(2);
        let mut dense = DenseAsppBlock::<f64>::new(&mut rng, 3, 4, 2, 5, &DENSE_RATES).unwrap();
        dense.visit_mut("", &mut |_, t| t.data_mut().fill(0.0));
        let tape = Tape::no_grad();
        let x = tape.constant(Tensor::from_fn(&[2, 3, 8, 8], |i| i as f64 * 0.1 - 3.0));
        let y = dense.forward(x).unwrap().value();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn first_dense_layer_equals_plain_branch() {
        // With a single layer there are no dense links yet: F₁ is exactly a
        // parallel branch at the same rate with the same parameters.
        let mut rng = Rng::new(3);
        let dense = DenseAsppBlock::<f64>::new(&mut rng, 3, 4, 2, 5, &[6]).unwrap();
        let mut plain = PlainAsppBlock::<f64>::new(&mut rng, 3, 4, 2, 5, &[6]).unwrap();
        plain.branches[0] = dense.layers[0].clone();
        let tape = Tape::no_grad();
        let x = tape.constant(Tensor::from_fn(&[1, 3, 16, 16], |i| ((i * 37) % 11) as f64 - 5.0));
        let f1 = dense.features(x).unwrap()[1].value();
        let b1 = plain.branch_features(x).unwrap()[1].value();
        assert_eq!(f1, b1);
    }

    #[test]
    fn channel_mismatch_errors() {
        let mut rng = Rng::new(4);
        let dense = DenseAsppBlock::<f32>::new(&mut rng, 3, 4, 2, 5, &DENSE_RATES).unwrap();
        let tape = Tape::no_grad();
        let x = tape.constant(Tensor::zeros(&[1, 4, 8, 8]));
        assert!(matches!(dense.forward(x), Err(crate::Error::Dimension(_))));
    }
}

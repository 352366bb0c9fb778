//! Convolutional block attention: channel gating followed by spatial gating.
//!
//! ```text
//! M_c = σ(MLP(GAP(F)) + MLP(GMP(F)))        MLP(x) = W₂·relu(W₁·x)
//! F'  = M_c ⊗ F
//! M_s = σ(conv7×7([mean_c F', max_c F']))
//! F'' = M_s ⊗ F'
//! ```
//!
//! Both outer activations are sigmoids so every gate lies in (0, 1).

use crate::autograd::Var;
use crate::error::{contract_err, dim_err, Result};
use crate::float::Float;
use crate::nn::{join, Conv2dLayer, DenseLayer, Module, PoolMode};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const SPATIAL_KERNEL: usize = 7;
pub const DEFAULT_REDUCTION: usize = 16;

/// Channel gate with a shared two-layer MLP of width `C / r`.
#[derive(Clone, Debug)]
pub struct ChannelAttention<T> {
    pub mlp_w1: DenseLayer<T>,
    pub mlp_w2: DenseLayer<T>,
    reduction: usize,
}

impl<T: Float> ChannelAttention<T> {
    /// `reduction` is clamped to `channels` so the hidden width is at least 1;
    /// after clamping it must divide `channels`.
    pub fn new(rng: &mut Rng, channels: usize, reduction: usize) -> Result<Self> {
        if channels == 0 || reduction == 0 {
            return contract_err("channel attention needs channels ≥ 1 and r ≥ 1");
        }
        let r = reduction.min(channels);
        if channels % r != 0 {
            return contract_err(format!(
                "reduction ratio {r} does not divide {channels} channels"
            ));
        }
        let hidden = channels / r;
        Ok(ChannelAttention {
            mlp_w1: DenseLayer::new(rng, channels, hidden),
            mlp_w2: DenseLayer::new(rng, hidden, channels),
            reduction: r,
        })
    }

    pub fn channels(&self) -> usize {
        self.mlp_w1.inputs()
    }

    pub fn reduction(&self) -> usize {
        self.reduction
    }

    fn mlp<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.mlp_w2.forward(self.mlp_w1.forward(x)?.relu())
    }

    /// Returns `(M_c, F')` with `M_c` of shape N×C.
    pub fn forward<'t>(&self, f: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let shape = f.shape();
        if shape.len() != 4 || shape[1] != self.channels() {
            return dim_err(format!(
                "channel attention built for {} channels, got input {shape:?}",
                self.channels()
            ));
        }
        let avg = self.mlp(f.global_pool(PoolMode::Avg)?)?;
        let max = self.mlp(f.global_pool(PoolMode::Max)?)?;
        let m_c = avg.add(max)?.sigmoid();
        let gate = m_c.reshape(&[shape[0], shape[1], 1, 1])?;
        Ok((m_c, f.mul(gate)?))
    }
}

impl<T: Float> Module<T> for ChannelAttention<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.mlp_w1.visit(&join(prefix, "mlp1"), f);
        self.mlp_w2.visit(&join(prefix, "mlp2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.mlp_w1.visit_mut(&join(prefix, "mlp1"), f);
        self.mlp_w2.visit_mut(&join(prefix, "mlp2"), f);
    }
}

/// Spatial gate: 7×7 "same" convolution over the channel-mean and
/// channel-max maps.
#[derive(Clone, Debug)]
pub struct SpatialAttention<T> {
    pub conv: Conv2dLayer<T>,
}

impl<T: Float> SpatialAttention<T> {
    pub fn new(rng: &mut Rng) -> Result<Self> {
        Ok(SpatialAttention {
            conv: Conv2dLayer::same(rng, 2, 1, SPATIAL_KERNEL, 1)?,
        })
    }

    /// Returns `(M_s, F'')` with `M_s` of shape N×1×H×W.
    pub fn forward<'t>(&self, f_prime: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let avg = f_prime.channel_pool(PoolMode::Avg)?;
        let max = f_prime.channel_pool(PoolMode::Max)?;
        let pooled = Var::concat(&[avg, max], 1)?;
        let m_s = self.conv.forward(pooled)?.sigmoid();
        Ok((m_s, f_prime.mul(m_s)?))
    }
}

impl<T: Float> Module<T> for SpatialAttention<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
    }
}

/// Gate values from one forward pass.
#[derive(Clone, Debug)]
pub struct AttentionWeights<T> {
    /// N×C
    pub m_c: Tensor<T>,
    /// N×1×H×W
    pub m_s: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Cbam<T> {
    pub channel: ChannelAttention<T>,
    pub spatial: SpatialAttention<T>,
}

impl<T: Float> Cbam<T> {
    pub fn new(rng: &mut Rng, channels: usize, reduction: usize) -> Result<Self> {
        Ok(Cbam {
            channel: ChannelAttention::new(rng, channels, reduction)?,
            spatial: SpatialAttention::new(rng)?,
        })
    }

    pub fn forward<'t>(&self, f: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.forward_with_weights(f)?.0)
    }

    /// Channel attention strictly first, then spatial attention.
    pub fn forward_with_weights<'t>(
        &self,
        f: Var<'t, T>,
    ) -> Result<(Var<'t, T>, AttentionWeights<T>)> {
        let (m_c, f_prime) = self.channel.forward(f)?;
        let (m_s, f_dprime) = self.spatial.forward(f_prime)?;
        Ok((
            f_dprime,
            AttentionWeights {
                m_c: m_c.value(),
                m_s: m_s.value(),
            },
        ))
    }
}

impl<T: Float> Module<T> for Cbam<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.channel.visit(&join(prefix, "channel"), f);
        self.spatial.visit(&join(prefix, "spatial"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.channel.visit_mut(&join(prefix, "channel"), f);
        self.spatial.visit_mut(&join(prefix, "spatial"), f);
    }
}

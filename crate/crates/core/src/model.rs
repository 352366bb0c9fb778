//! The encoder–decoder segmentation network.
//!
//! ```text
//! x ─ stage1 ─ stage2 ─┬──────────── stage3 ─ stage4 ─ ASPP ─ ↑4 ─┐
//!     (s2)     (s4)    │                                (s16)     concat ─ 3×3 ─ 3×3 ─ 1×1 ─ ↑4
//!                      └─ CBAM ─ 1×1 (→48) ───────────────────────┘
//! ```
//!
//! Each encoder stage is a stride-2 3×3 convolution followed by a stride-1
//! 3×3 convolution, both with ReLU.

use crate::aspp::{DenseAsppBlock, PlainAsppBlock, DENSE_RATES, PLAIN_RATES};
use crate::autograd::{Tape, Var};
use crate::cbam::{Cbam, DEFAULT_REDUCTION};
use crate::error::{contract_err, dim_err, Result};
use crate::float::Float;
use crate::nn::{join, Conv2dLayer, Module, Padding};
use crate::rng::Rng;
use crate::segmask::{SegMask, MAX_CLASS};
use crate::tensor::Tensor;

/// Total downsampling of the deep path.
pub const OUTPUT_STRIDE: usize = 16;
const SHALLOW_STAGE: usize = 1;
const DECODER_UPSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AsppMode {
    Dense,
    Plain,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub in_channels: usize,
    pub backbone_widths: [usize; 4],
    pub attention: bool,
    pub reduction: usize,
    pub aspp_mode: AsppMode,
    pub dense_rates: Vec<usize>,
    pub plain_rates: Vec<usize>,
    pub aspp_inter: usize,
    pub aspp_growth: usize,
    pub aspp_out: usize,
    pub low_level_channels: usize,
    pub decoder_width: usize,
    pub input_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: MAX_CLASS as usize + 1,
            in_channels: 1,
            backbone_widths: [32, 64, 128, 256],
            attention: true,
            reduction: DEFAULT_REDUCTION,
            aspp_mode: AsppMode::Dense,
            dense_rates: DENSE_RATES.to_vec(),
            plain_rates: PLAIN_RATES.to_vec(),
            aspp_inter: 128,
            aspp_growth: 64,
            aspp_out: 256,
            low_level_channels: 48,
            decoder_width: 64,
            input_size: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_CLASS as usize + 1).contains(&self.num_classes) {
            return contract_err(format!("num_classes must be in 2..=14, got {}", self.num_classes));
        }
        if self.input_size == 0 || self.input_size % OUTPUT_STRIDE != 0 {
            return contract_err(format!(
                "input size {} is not a positive multiple of {OUTPUT_STRIDE}",
                self.input_size
            ));
        }
        let widths = [
            self.in_channels,
            self.aspp_inter,
            self.aspp_growth,
            self.aspp_out,
            self.low_level_channels,
            self.decoder_width,
            self.reduction,
        ];
        if widths.contains(&0) || self.backbone_widths.contains(&0) {
            return contract_err("all channel widths and the reduction ratio must be ≥ 1");
        }
        let rates = self.rates();
        if rates.is_empty() || rates.contains(&0) {
            return contract_err(format!("dilation rates must be non-empty and ≥ 1: {rates:?}"));
        }
        Ok(())
    }

    /// Rates used by the configured pyramid.
    pub fn rates(&self) -> &[usize] {
        match self.aspp_mode {
            AsppMode::Dense => &self.dense_rates,
            AsppMode::Plain => &self.plain_rates,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncoderStage<T> {
    pub down: Conv2dLayer<T>,
    pub refine: Conv2dLayer<T>,
}

impl<T: Float> EncoderStage<T> {
    fn new(rng: &mut Rng, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(EncoderStage {
            down: Conv2dLayer::new(rng, c_in, c_out, 3, 2, 1, Padding::Explicit(1), true)?,
            refine: Conv2dLayer::same(rng, c_out, c_out, 3, 1)?,
        })
    }

    fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.down.forward(x)?.relu();
        Ok(self.refine.forward(h)?.relu())
    }
}

impl<T: Float> Module<T> for EncoderStage<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.down.visit(&join(prefix, "down"), f);
        self.refine.visit(&join(prefix, "refine"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.down.visit_mut(&join(prefix, "down"), f);
        self.refine.visit_mut(&join(prefix, "refine"), f);
    }
}

#[derive(Clone, Debug)]
pub enum Aspp<T> {
    Dense(DenseAsppBlock<T>),
    Plain(PlainAsppBlock<T>),
}

impl<T: Float> Aspp<T> {
    pub fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Aspp::Dense(b) => b.forward(x),
            Aspp::Plain(b) => b.forward(x),
        }
    }
}

impl<T: Float> Module<T> for Aspp<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        match self {
            Aspp::Dense(b) => b.visit(prefix, f),
            Aspp::Plain(b) => b.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        match self {
            Aspp::Dense(b) => b.visit_mut(prefix, f),
            Aspp::Plain(b) => b.visit_mut(prefix, f),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DcdModel<T> {
    config: ModelConfig,
    pub stages: Vec<EncoderStage<T>>,
    pub cbam: Option<Cbam<T>>,
    pub aspp: Aspp<T>,
    pub low_level: Conv2dLayer<T>,
    pub decoder: [Conv2dLayer<T>; 2],
    pub classifier: Conv2dLayer<T>,
}

impl<T: Float> DcdModel<T> {
    /// Builds and initializes every layer from `rng`. Each component draws
    /// from its own fork so toggling attention leaves the other parameters
    /// unchanged.
    pub fn new(config: &ModelConfig, rng: &Rng) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut stages = Vec::with_capacity(4);
        let mut c_in = c.in_channels;
        for (i, &w) in c.backbone_widths.iter().enumerate() {
            stages.push(EncoderStage::new(&mut rng.fork(1 + i as u64), c_in, w)?);
            c_in = w;
        }
        let shallow = c.backbone_widths[SHALLOW_STAGE];
        let deep = c.backbone_widths[3];
        let cbam = if c.attention {
            Some(Cbam::new(&mut rng.fork(10), shallow, c.reduction)?)
        } else {
            None
        };
        let mut r = rng.fork(20);
        let aspp = match c.aspp_mode {
            AsppMode::Dense => Aspp::Dense(DenseAsppBlock::new(
                &mut r,
                deep,
                c.aspp_inter,
                c.aspp_growth,
                c.aspp_out,
                &c.dense_rates,
            )?),
            AsppMode::Plain => Aspp::Plain(PlainAsppBlock::new(
                &mut r,
                deep,
                c.aspp_inter,
                c.aspp_growth,
                c.aspp_out,
                &c.plain_rates,
            )?),
        };
        let mut r = rng.fork(30);
        let low_level = Conv2dLayer::same(&mut r, shallow, c.low_level_channels, 1, 1)?;
        let decoder = [
            Conv2dLayer::same(&mut r, c.aspp_out + c.low_level_channels, c.decoder_width, 3, 1)?,
            Conv2dLayer::same(&mut r, c.decoder_width, c.decoder_width, 3, 1)?,
        ];
        let classifier = Conv2dLayer::same(&mut r, c.decoder_width, c.num_classes, 1, 1)?;
        Ok(DcdModel {
            config: config.clone(),
            stages,
            cbam,
            aspp,
            low_level,
            decoder,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Logits at input resolution.
    pub fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.config.in_channels {
            return dim_err(format!(
                "model expects N×{}×H×W input, got {shape:?}",
                self.config.in_channels
            ));
        }
        if shape[2] % OUTPUT_STRIDE != 0 || shape[3] % OUTPUT_STRIDE != 0 || shape[2] == 0 || shape[3] == 0 {
            return contract_err(format!(
                "input {}×{} is not divisible by {OUTPUT_STRIDE}",
                shape[2], shape[3]
            ));
        }
        let mut h = x;
        let mut shallow = None;
        for (i, stage) in self.stages.iter().enumerate() {
            h = stage.forward(h)?;
            if i == SHALLOW_STAGE {
                shallow = Some(h);
            }
        }
        let mut shallow = shallow.expect("encoder has four stages");
        if let Some(cbam) = &self.cbam {
            shallow = cbam.forward(shallow)?;
        }
        let low = self.low_level.forward(shallow)?.relu();
        let deep = self.aspp.forward(h)?.upsample_bilinear(DECODER_UPSAMPLE)?;
        let mut d = Var::concat(&[deep, low], 1)?;
        for conv in &self.decoder {
            d = conv.forward(d)?.relu();
        }
        self.classifier.forward(d)?.upsample_bilinear(DECODER_UPSAMPLE)
    }

    /// Per-pixel argmax masks for an N×C×H×W batch.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<SegMask>> {
        let tape = Tape::no_grad();
        let logits = self.forward(tape.constant(x.clone()))?.value();
        argmax_masks(&logits)
    }
}

/// Argmax over the class axis of N×C×H×W scores, ties to the lowest class.
/// Softmax is monotone, so this is also the argmax of the probabilities.
pub fn argmax_masks<T: Float>(scores: &Tensor<T>) -> Result<Vec<SegMask>> {
    let s = scores.shape();
    if s.len() != 4 {
        return dim_err(format!("argmax expects N×C×H×W, got {s:?}"));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if c == 0 || c > MAX_CLASS as usize + 1 {
        return contract_err(format!("cannot label {c} classes"));
    }
    let plane = h * w;
    let data = scores.data();
    (0..n)
        .map(|b| {
            let base = b * c * plane;
            let labels = (0..plane)
                .map(|p| {
                    let mut best = 0;
                    let mut best_v = data[base + p];
                    for k in 1..c {
                        let v = data[base + k * plane + p];
                        if v > best_v {
                            best = k;
                            best_v = v;
                        }
                    }
                    best as u8
                })
                .collect();
            SegMask::new(h, w, labels)
        })
        .collect()
}

impl<T: Float> Module<T> for DcdModel<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (i, s) in self.stages.iter().enumerate() {
            s.visit(&join(prefix, &format!("encoder.stage{}", i + 1)), f);
        }
        if let Some(c) = &self.cbam {
            c.visit(&join(prefix, "cbam"), f);
        }
        self.aspp.visit(&join(prefix, "aspp"), f);
        self.low_level.visit(&join(prefix, "decoder.low_level"), f);
        for (i, d) in self.decoder.iter().enumerate() {
            d.visit(&join(prefix, &format!("decoder.conv{}", i + 1)), f);
        }
        self.classifier.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_mut(&join(prefix, &format!("encoder.stage{}", i + 1)), f);
        }
        if let Some(c) = &mut self.cbam {
            c.visit_mut(&join(prefix, "cbam"), f);
        }
        self.aspp.visit_mut(&join(prefix, "aspp"), f);
        self.low_level.visit_mut(&join(prefix, "decoder.low_level"), f);
        for (i, d) in self.decoder.iter_mut().enumerate() {
            d.visit_mut(&join(prefix, &format!("decoder.conv{}", i + 1)), f);
        }
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            backbone_widths: [4, 8, 8, 8],
            reduction: 4,
            aspp_inter: 4,
            aspp_growth: 4,
            aspp_out: 8,
            low_level_channels: 4,
            decoder_width: 8,
            input_size: 32,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn output_shape_matches_input() {
        let model = DcdModel::<f32>::new(&tiny(), &Rng::new(0)).unwrap();
        let tape = Tape::no_grad();
        let x = tape.constant(Tensor::zeros(&[2, 1, 32, 48]));
        assert_eq!(model.forward(x).unwrap().shape(), vec![2, 14, 32, 48]);
    }

    #[test]
    fn default_config_64() {
        let model = DcdModel::<f32>::new(&ModelConfig::default(), &Rng::new(0)).unwrap();
        let tape = Tape::no_grad();
        let x = tape.constant(Tensor::zeros(&[1, 1, 64, 64]));
        assert_eq!(model.forward(x).unwrap().shape(), vec![1, 14, 64, 64]);
    }

    #[test]
    fn indivisible_input_rejected() {
        let model = DcdModel::<f32>::new(&tiny(), &Rng::new(0)).unwrap();
        let tape = Tape::no_grad();
        let r = model.forward(tape.constant(Tensor::zeros(&[1, 1, 40, 32])));
        assert!(matches!(r, Err(crate::Error::Contract(_))));
        let bad = ModelConfig { input_size: 50, ..tiny() };
        assert!(DcdModel::<f32>::new(&bad, &Rng::new(0)).is_err());
        let bad = ModelConfig { num_classes: 1, ..tiny() };
        assert!(DcdModel::<f32>::new(&bad, &Rng::new(0)).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let model = DcdModel::<f32>::new(&tiny(), &Rng::new(3)).unwrap();
        let x = Tensor::from_fn(&[1, 1, 32, 32], |i| (i as f32 * 0.37).sin());
        let a = model.forward(Tape::no_grad().constant(x.clone())).unwrap().value();
        let b = model.forward(Tape::no_grad().constant(x)).unwrap().value();
        assert_eq!(a, b);
    }

    #[test]
    fn attention_toggle_only_touches_cbam() {
        let on = DcdModel::<f32>::new(&tiny(), &Rng::new(5)).unwrap();
        let off_cfg = ModelConfig { attention: false, ..tiny() };
        let off = DcdModel::<f32>::new(&off_cfg, &Rng::new(5)).unwrap();
        let on_params: Vec<_> = on
            .named_params()
            .into_iter()
            .filter(|(n, _)| !n.starts_with("cbam."))
            .collect();
        let off_params = off.named_params();
        assert_eq!(on_params.len(), off_params.len());
        for ((na, ta), (nb, tb)) in on_params.iter().zip(&off_params) {
            assert_eq!(na, nb);
            assert_eq!(ta, tb);
        }
        assert!(on.param_count() > off.param_count());
    }

    #[test]
    fn param_count_is_a_function_of_config() {
        let a = DcdModel::<f32>::new(&tiny(), &Rng::new(1)).unwrap();
        let b = DcdModel::<f32>::new(&tiny(), &Rng::new(2)).unwrap();
        assert_eq!(a.param_count(), b.param_count());
    }

    #[test]
    fn argmax_picks_dominant_class_and_lowest_tie() {
        let mut s = Tensor::<f64>::zeros(&[1, 14, 2, 2]);
        for p in 0..4 {
            s.data_mut()[5 * 4 + p] = 3.0;
        }
        assert!(argmax_masks(&s).unwrap()[0].data().iter().all(|&v| v == 5));
        let ties = Tensor::<f64>::ones(&[1, 3, 1, 2]);
        assert_eq!(argmax_masks(&ties).unwrap()[0].data(), &[0, 0]);
    }
}

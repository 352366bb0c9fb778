//! The 64-bit finite-difference suite over every differentiable building
//! block, from single convolutions up to the loss through a tiny full model.

use crate::aspp::{DenseAsppBlock, PlainAsppBlock, DENSE_RATES, PLAIN_RATES};
use crate::autograd::Var;
use crate::cbam::Cbam;
use crate::error::Result;
use crate::gradcheck::{grad_check, grad_check_many, grad_check_module};
use crate::loss::{ce_loss, dice_loss, total_loss};
use crate::model::{DcdModel, ModelConfig};
use crate::nn::{ConvAlgo, Conv2dGeometry, Module, PoolMode};
use crate::rng::Rng;
use crate::segmask::SegMask;
use crate::tensor::Tensor;

/// Maximum accepted relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCase {
    pub name: String,
    pub error: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.error <= GRAD_TOLERANCE
    }
}

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0))
}

/// `Σ y ⊙ r` for a fixed random `r`, so no coordinate of the gradient is
/// structurally tied to another.
fn weighted_sum<'t>(y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let mut rng = Rng::new(seed);
    let r = Tensor::from_fn(&y.shape(), |_| rng.uniform_range(0.5, 1.5));
    Ok(y.mul(y.tape().constant(r))?.sum_all())
}

/// Zero biases put pre-activations exactly on ReLU kinks wherever the
/// upstream activation is dead, where central differences are meaningless.
/// Small positive biases keep the check point away from kinks and keep most
/// units alive, so the gradients being compared are not trivially zero.
fn randomize_biases<M: Module<f64>>(m: &mut M, rng: &mut Rng) {
    m.visit_mut("", &mut |name, t| {
        if name.ends_with("bias") {
            for v in t.data_mut() {
                *v = rng.uniform_range(0.05, 0.25);
            }
        }
    });
}

fn random_masks(rng: &mut Rng, n: usize, h: usize, w: usize, classes: usize) -> Vec<SegMask> {
    (0..n)
        .map(|_| SegMask::new(h, w, (0..h * w).map(|_| rng.below(classes) as u8).collect()).unwrap())
        .collect()
}

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        num_classes: 3,
        backbone_widths: [3, 4, 4, 4],
        reduction: 2,
        aspp_inter: 2,
        aspp_growth: 2,
        aspp_out: 3,
        low_level_channels: 2,
        decoder_width: 3,
        input_size: 16,
        ..ModelConfig::default()
    }
}

/// Runs every case. Each entry reports the worst relative error.
pub fn run_suite() -> Result<Vec<GradCase>> {
    let mut rng = Rng::new(2024);
    let mut out = Vec::new();
    let mut push = |name: String, error: f64| out.push(GradCase { name, error });

    let x = random(&mut rng, &[1, 2, 7, 7]);
    let w = random(&mut rng, &[3, 2, 3, 3]);
    let b = random(&mut rng, &[3]);
    let conv_cases: Vec<(String, Conv2dGeometry, ConvAlgo)> = [1, 2, 3, 6, 12, 18]
        .iter()
        .map(|&d| (format!("conv2d d={d}"), Conv2dGeometry::same(3, d), ConvAlgo::Im2col))
        .chain([
            (
                "conv2d stride 2".to_string(),
                Conv2dGeometry {
                    stride: 2,
                    padding: 1,
                    dilation: 1,
                },
                ConvAlgo::Im2col,
            ),
            ("conv2d direct d=2".to_string(), Conv2dGeometry::same(3, 2), ConvAlgo::Direct),
        ])
        .collect();
    for (name, g, algo) in conv_cases {
        let e = grad_check_many(
            |v| weighted_sum(v[0].conv2d(v[1], Some(v[2]), g, algo)?, 1),
            &[x.clone(), w.clone(), b.clone()],
            EPS,
        )?;
        push(name, e);
    }

    let x = random(&mut rng, &[2, 3, 4, 5]);
    for (name, mode) in [("avg", PoolMode::Avg), ("max", PoolMode::Max)] {
        push(
            format!("global pool {name}"),
            grad_check(|v| weighted_sum(v.global_pool(mode)?, 2), &x, EPS)?,
        );
        push(
            format!("channel pool {name}"),
            grad_check(|v| weighted_sum(v.channel_pool(mode)?, 3), &x, EPS)?,
        );
    }

    let x = random(&mut rng, &[1, 2, 3, 4]);
    for f in [2, 3, 4] {
        push(
            format!("upsample x{f}"),
            grad_check(|v| weighted_sum(v.upsample_bilinear(f)?, 4), &x, EPS)?,
        );
    }

    let x = random(&mut rng, &[2, 4, 5, 5]);
    let mut cbam = Cbam::<f64>::new(&mut rng, 4, 2)?;
    randomize_biases(&mut cbam, &mut rng);
    push(
        "cbam full".into(),
        grad_check_module(&mut cbam, &[x], |m, v| weighted_sum(m.forward(v[0])?, 5), EPS)?,
    );

    let x = random(&mut rng, &[1, 3, 6, 6]);
    let mut dense = DenseAsppBlock::<f64>::new(&mut rng, 3, 2, 2, 3, &DENSE_RATES)?;
    randomize_biases(&mut dense, &mut rng);
    push(
        "dense aspp full".into(),
        grad_check_module(&mut dense, &[x.clone()], |m, v| weighted_sum(m.forward(v[0])?, 6), EPS)?,
    );
    let mut plain = PlainAsppBlock::<f64>::new(&mut rng, 3, 2, 2, 3, &PLAIN_RATES)?;
    randomize_biases(&mut plain, &mut rng);
    push(
        "plain aspp full".into(),
        grad_check_module(&mut plain, &[x], |m, v| weighted_sum(m.forward(v[0])?, 7), EPS)?,
    );

    let logits = random(&mut rng, &[2, 4, 3, 3]).map(|v| 2.0 * v);
    let targets = random_masks(&mut rng, 2, 3, 3, 4);
    push(
        "cross-entropy".into(),
        grad_check(|v| ce_loss(v, &targets), &logits, EPS)?,
    );
    push(
        "soft dice".into(),
        grad_check(|v| dice_loss(v, &targets), &logits, EPS)?,
    );
    push(
        "total loss".into(),
        grad_check(|v| Ok(total_loss(v, &targets)?.total), &logits, EPS)?,
    );

    let cfg = tiny_model_config();
    let mut model = DcdModel::<f64>::new(&cfg, &Rng::new(77))?;
    randomize_biases(&mut model, &mut rng);
    let x = random(&mut rng, &[2, 1, 16, 16]);
    let targets = random_masks(&mut rng, 2, 16, 16, 3);
    push(
        "total loss through full model 16x16".into(),
        grad_check_module(
            &mut model,
            &[x],
            |m, v| Ok(total_loss(m.forward(v[0])?, &targets)?.total),
            EPS,
        )?,
    );
    Ok(out)
}

//! Randomized invariants over the tensor engine, layers, losses, metrics,
//! schedule and file formats.

use std::collections::HashSet;

use dcd::autograd::ReduceOp;
use dcd::cbam::{Cbam, SpatialAttention};
use dcd::gradcheck::grad_check_many;
use dcd::io::{
    parse_config, read_mask, read_tensor, render_config, write_mask, write_tensor, AnyTensor,
    Config, Preset,
};
use dcd::loss::{ce_loss, hard_dice_loss};
use dcd::metrics::ConfusionAccumulator;
use dcd::model::{AsppMode, ModelConfig};
use dcd::nn::{Conv2dGeometry, ConvAlgo, DenseLayer, Module, PoolMode};
use dcd::optim::{Adam, AdamHyper, Schedule};
use dcd::train::TrainSettings;
use dcd::{Rng, SegMask, Tape, Tensor, Var};
use proptest::prelude::*;

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform_range(lo, hi))
}

/// Values at least 0.05 away from zero, either sign.
fn off_zero(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.uniform_range(0.05, 1.0);
        if rng.uniform() < 0.5 {
            -m
        } else {
            m
        }
    })
}

/// Distinct values with pairwise gaps of at least 0.03, so no finite
/// difference step crosses a max tie.
fn well_separated(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    Tensor::from_fn(shape, |i| order[i] as f64 * 0.05 - 1.0 + rng.uniform_range(-0.01, 0.01))
}

fn weighted<'t>(y: Var<'t, f64>, rng: &mut Rng) -> dcd::Result<Var<'t, f64>> {
    let r = uniform(rng, &y.shape(), 0.5, 1.5);
    Ok(y.mul(y.tape().constant(r))?.sum_all())
}

fn random_mask(rng: &mut Rng, h: usize, w: usize, classes: usize) -> SegMask {
    SegMask::new(h, w, (0..h * w).map(|_| rng.below(classes) as u8).collect()).unwrap()
}

const GRAD_EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn elementwise_gradients_match_finite_differences(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let shape = [1 + rng.below(3), 1 + rng.below(4)];
        let a = uniform(&mut rng, &shape, -1.0, 1.0);
        let b = off_zero(&mut rng, &shape);
        let pos = uniform(&mut rng, &shape, 0.5, 2.0);
        let r = rng.next_u64();
        let err = grad_check_many(
            |v| {
                let mut rng = Rng::new(r);
                let y = v[0]
                    .add(v[1])?
                    .mul(v[0].sigmoid())?
                    .sub(v[1].div(v[2])?)?
                    .add(v[2].ln()?)?
                    .add(v[0].exp().scale(0.5))?
                    .add(v[1].relu().neg())?
                    .add_scalar(0.3);
                weighted(y, &mut rng)
            },
            &[a, b, pos],
            GRAD_EPS,
        )
        .unwrap();
        prop_assert!(err <= GRAD_TOL, "{err}");
    }

    #[test]
    fn reduction_and_softmax_gradients_match(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let shape = [1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(4)];
        let axis = rng.below(3);
        let x = well_separated(&mut rng, &shape);
        let r = rng.next_u64();
        let err = grad_check_many(
            |v| {
                let mut rng = Rng::new(r);
                let s = weighted(v[0].softmax(axis)?, &mut rng)?;
                let l = weighted(v[0].log_softmax(axis)?, &mut rng)?;
                let sum = weighted(v[0].reduce(ReduceOp::Sum, &[axis], false)?, &mut rng)?;
                let mean = weighted(v[0].reduce(ReduceOp::Mean, &[axis], true)?, &mut rng)?;
                let max = weighted(v[0].reduce(ReduceOp::Max, &[axis], false)?, &mut rng)?;
                s.add(l)?.add(sum)?.add(mean)?.add(max)
            },
            &[x],
            GRAD_EPS,
        )
        .unwrap();
        prop_assert!(err <= GRAD_TOL, "{err}");
    }

    #[test]
    fn matmul_and_shape_gradients_match(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (m, k, n) = (1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4));
        let a = uniform(&mut rng, &[m, k], -1.0, 1.0);
        let b = uniform(&mut rng, &[n, k], -1.0, 1.0);
        let r = rng.next_u64();
        let err = grad_check_many(
            |v| {
                let mut rng = Rng::new(r);
                let p = v[0].matmul(v[1].transpose()?)?;
                let flat = p.reshape(&[1, 1, m, n])?;
                let twice = Var::concat(&[flat, flat.scale(2.0)], 1)?;
                weighted(twice, &mut rng)
            },
            &[a, b],
            GRAD_EPS,
        )
        .unwrap();
        prop_assert!(err <= GRAD_TOL, "{err}");
    }

    #[test]
    fn conv_gradients_match(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (n, ci, co) = (1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(3));
        let (h, w) = (3 + rng.below(5), 3 + rng.below(5));
        let k = [1, 3][rng.below(2)];
        let d = 1 + rng.below(3);
        let g = Conv2dGeometry {
            stride: 1 + rng.below(2),
            padding: d * (k - 1) / 2 + rng.below(2),
            dilation: d,
        };
        let algo = [ConvAlgo::Direct, ConvAlgo::Im2col][rng.below(2)];
        let x = uniform(&mut rng, &[n, ci, h, w], -1.0, 1.0);
        let wt = uniform(&mut rng, &[co, ci, k, k], -1.0, 1.0);
        let b = uniform(&mut rng, &[co], -1.0, 1.0);
        let r = rng.next_u64();
        let err = grad_check_many(
            |v| weighted(v[0].conv2d(v[1], Some(v[2]), g, algo)?, &mut Rng::new(r)),
            &[x, wt, b],
            GRAD_EPS,
        )
        .unwrap();
        prop_assert!(err <= GRAD_TOL, "{err}");
    }

    #[test]
    fn pool_and_upsample_gradients_match(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let shape = [1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4)];
        let factor = 1 + rng.below(4);
        let x = well_separated(&mut rng, &shape);
        let r = rng.next_u64();
        let err = grad_check_many(
            |v| {
                let mut rng = Rng::new(r);
                let mut total = weighted(v[0].upsample_bilinear(factor)?, &mut rng)?;
                for mode in [PoolMode::Avg, PoolMode::Max] {
                    total = total.add(weighted(v[0].global_pool(mode)?, &mut rng)?)?;
                    total = total.add(weighted(v[0].channel_pool(mode)?, &mut rng)?)?;
                }
                Ok(total)
            },
            &[x],
            GRAD_EPS,
        )
        .unwrap();
        prop_assert!(err <= GRAD_TOL, "{err}");
    }

    #[test]
    fn softmax_sums_to_one(seed in any::<u64>(), spread in 0.1f64..200.0) {
        let mut rng = Rng::new(seed);
        let shape = [1 + rng.below(3), 1 + rng.below(14), 1 + rng.below(5)];
        let x: Tensor<f32> = uniform(&mut rng, &shape, -spread, spread).cast();
        let tape = Tape::no_grad();
        let s = tape.constant(x).softmax(1).unwrap().value();
        for a in 0..shape[0] {
            for c in 0..shape[2] {
                let total: f64 = (0..shape[1]).map(|k| s.get(&[a, k, c]) as f64).sum();
                prop_assert!((total - 1.0).abs() <= 1e-6, "{total}");
            }
        }
    }

    #[test]
    fn sigmoid_stays_strictly_inside_unit_interval(x32 in any::<f32>(), x64 in any::<f64>()) {
        prop_assume!(x32.is_finite() && x64.is_finite());
        let t32 = Tape::no_grad();
        let s32 = t32.constant(Tensor::scalar(x32)).sigmoid().value().item().unwrap();
        prop_assert!(s32 > 0.0 && s32 < 1.0, "{x32} -> {s32}");
        let t64 = Tape::no_grad();
        let s64 = t64.constant(Tensor::scalar(x64)).sigmoid().value().item().unwrap();
        prop_assert!(s64 > 0.0 && s64 < 1.0, "{x64} -> {s64}");
    }

    #[test]
    fn conv_is_linear_in_its_input(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = Rng::new(seed);
        let (ci, co) = (1 + rng.below(4), 1 + rng.below(4));
        let d = 1 + rng.below(4);
        let g = Conv2dGeometry::same(3, d);
        let shape = [1 + rng.below(2), ci, 4 + rng.below(6), 4 + rng.below(6)];
        let x: Tensor<f32> = uniform(&mut rng, &shape, -1.0, 1.0).cast();
        let y: Tensor<f32> = uniform(&mut rng, &shape, -1.0, 1.0).cast();
        let w: Tensor<f32> = uniform(&mut rng, &[co, ci, 3, 3], -1.0, 1.0).cast();
        let tape = Tape::no_grad();
        let conv = |t: Tensor<f32>| {
            tape.constant(t)
                .conv2d(tape.constant(w.clone()), None, g, ConvAlgo::Im2col)
                .unwrap()
                .value()
        };
        let (a, b) = (alpha as f32, beta as f32);
        let mixed = Tensor::from_fn(&shape, |i| a * x.data()[i] + b * y.data()[i]);
        let lhs = conv(mixed);
        let (cx, cy) = (conv(x.clone()), conv(y.clone()));
        let scale = lhs.data().iter().fold(1.0f32, |m, v| m.max(v.abs()));
        for i in 0..lhs.numel() {
            let rhs = a * cx.data()[i] + b * cy.data()[i];
            prop_assert!((lhs.data()[i] - rhs).abs() <= 1e-5 * scale, "{} vs {rhs}", lhs.data()[i]);
        }
    }

    #[test]
    fn far_taps_leave_output_at_bias(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let d = 1 + rng.below(5);
        let k = [3, 5][rng.below(2)];
        let reach = d * (k - 1) / 2;
        let (h, w) = (2 * reach + 3 + rng.below(6), 2 * reach + 3 + rng.below(6));
        let (py, px) = (rng.below(h), rng.below(w));
        let x = Tensor::from_fn(&[1, 2, h, w], |i| {
            let (y, xx) = ((i % (h * w)) / w, i % w);
            if y.abs_diff(py) > reach || xx.abs_diff(px) > reach {
                rng.uniform_range(-5.0, 5.0)
            } else {
                0.0
            }
        });
        let wt = uniform(&mut rng, &[3, 2, k, k], -1.0, 1.0);
        let b = uniform(&mut rng, &[3], -1.0, 1.0);
        let tape = Tape::no_grad();
        for algo in [ConvAlgo::Direct, ConvAlgo::Im2col] {
            let out = tape
                .constant(x.clone())
                .conv2d(tape.constant(wt.clone()), Some(tape.constant(b.clone())), Conv2dGeometry::same(k, d), algo)
                .unwrap()
                .value();
            for c in 0..3 {
                prop_assert_eq!(out.get(&[0, c, py, px]), b.data()[c]);
            }
        }
    }

    #[test]
    fn direct_and_im2col_agree(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (ci, co) = (1 + rng.below(5), 1 + rng.below(5));
        let d = 1 + rng.below(3);
        let g = Conv2dGeometry {
            stride: 1 + rng.below(2),
            padding: d + rng.below(2),
            dilation: d,
        };
        let (h, w) = (5 + rng.below(5), 5 + rng.below(5));
        let x: Tensor<f32> = uniform(&mut rng, &[2, ci, h, w], -1.0, 1.0).cast();
        let w: Tensor<f32> = uniform(&mut rng, &[co, ci, 3, 3], -1.0, 1.0).cast();
        let b: Tensor<f32> = uniform(&mut rng, &[co], -1.0, 1.0).cast();
        let tape = Tape::no_grad();
        let run = |algo| {
            tape.constant(x.clone())
                .conv2d(tape.constant(w.clone()), Some(tape.constant(b.clone())), g, algo)
                .unwrap()
                .value()
        };
        let diff = run(ConvAlgo::Direct).max_abs_diff(&run(ConvAlgo::Im2col)).unwrap();
        prop_assert!(diff <= 1e-5, "{diff}");
    }

    #[test]
    fn upsampling_preserves_spatial_mean(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let shape = [1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(6), 1 + rng.below(6)];
        let factor = 1 + rng.below(5);
        let x = uniform(&mut rng, &shape, -2.0, 2.0);
        let tape = Tape::no_grad();
        let v = tape.constant(x);
        let before = v.global_pool(PoolMode::Avg).unwrap().value();
        let after = v.upsample_bilinear(factor).unwrap().global_pool(PoolMode::Avg).unwrap().value();
        prop_assert!(before.max_abs_diff(&after).unwrap() <= 1e-5);
    }

    #[test]
    fn upsampling_a_constant_gives_the_constant(value in -100.0f64..100.0, factor in 1usize..6, h in 1usize..5, w in 1usize..5) {
        let tape = Tape::no_grad();
        let up = tape.constant(Tensor::full(&[1, 2, h, w], value)).upsample_bilinear(factor).unwrap().value();
        prop_assert_eq!(up.shape(), &[1, 2, h * factor, w * factor]);
        prop_assert!(up.data().iter().all(|&v| (v - value).abs() <= 1e-12 * value.abs().max(1.0)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_gates_and_magnitudes(seed in any::<u64>(), gain in 0.1f64..1000.0) {
        let mut rng = Rng::new(seed);
        let c = 1 + rng.below(8);
        let divisors: Vec<usize> = (1..=c).filter(|r| c % r == 0).collect();
        let r = divisors[rng.below(divisors.len())];
        let cbam = Cbam::<f32>::new(&mut rng, c, r).unwrap();
        let shape = [1 + rng.below(2), c, 1 + rng.below(6), 1 + rng.below(6)];
        let x: Tensor<f32> = uniform(&mut rng, &shape, -gain, gain).cast();
        let tape = Tape::no_grad();
        let (out, weights) = cbam.forward_with_weights(tape.constant(x.clone())).unwrap();
        let out = out.value();
        prop_assert_eq!(out.shape(), x.shape());
        prop_assert_eq!(weights.m_c.shape(), &[shape[0], c]);
        prop_assert_eq!(weights.m_s.shape(), &[shape[0], 1, shape[2], shape[3]]);
        for &g in weights.m_c.data().iter().chain(weights.m_s.data()) {
            prop_assert!(g > 0.0 && g < 1.0, "{g}");
        }
        for (o, i) in out.data().iter().zip(x.data()) {
            prop_assert!(o.abs() <= i.abs());
        }
    }

    #[test]
    fn channel_gate_ignores_spatial_order(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let c = 1 + rng.below(8);
        let cbam = Cbam::<f32>::new(&mut rng, c, 1).unwrap();
        let (n, h, w) = (1 + rng.below(2), 1 + rng.below(6), 1 + rng.below(6));
        let x: Tensor<f32> = uniform(&mut rng, &[n, c, h, w], -3.0, 3.0).cast();
        let mut perm: Vec<usize> = (0..h * w).collect();
        rng.shuffle(&mut perm);
        let moved = Tensor::from_fn(&[n, c, h, w], |i| {
            let plane = i / (h * w);
            x.data()[plane * h * w + perm[i % (h * w)]]
        });
        let tape = Tape::no_grad();
        let a = cbam.channel.forward(tape.constant(x)).unwrap().0.value();
        let b = cbam.channel.forward(tape.constant(moved)).unwrap().0.value();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn spatial_gate_ignores_channel_order(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let sa = SpatialAttention::<f32>::new(&mut rng).unwrap();
        let (n, c, h, w) = (1 + rng.below(2), 1 + rng.below(9), 1 + rng.below(8), 1 + rng.below(8));
        let x: Tensor<f32> = uniform(&mut rng, &[n, c, h, w], -3.0, 3.0).cast();
        let mut perm: Vec<usize> = (0..c).collect();
        rng.shuffle(&mut perm);
        let moved = Tensor::from_fn(&[n, c, h, w], |i| {
            let (b, ch, px) = (i / (c * h * w), (i / (h * w)) % c, i % (h * w));
            x.data()[(b * c + perm[ch]) * h * w + px]
        });
        let tape = Tape::no_grad();
        let a = sa.forward(tape.constant(x)).unwrap().0.value();
        let b = sa.forward(tape.constant(moved)).unwrap().0.value();
        prop_assert_eq!(a.data(), b.data());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dice_and_iou_are_linked(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (h, w) = (1 + rng.below(16), 1 + rng.below(16));
        let classes = 2 + rng.below(13);
        let (p, g) = (random_mask(&mut rng, h, w, classes), random_mask(&mut rng, h, w, classes));
        let mut acc = ConfusionAccumulator::new(classes);
        acc.add(&p, &g).unwrap();
        for c in 0..classes {
            match (acc.iou(c), acc.dice(c)) {
                (Some(iou), Some(dsc)) => {
                    prop_assert!((dsc - 2.0 * iou / (1.0 + iou)).abs() <= 1e-12);
                    prop_assert!((0.0..=1.0).contains(&iou));
                }
                (None, None) => {}
                other => prop_assert!(false, "{other:?}"),
            }
        }
    }

    #[test]
    fn iou_is_symmetric(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (h, w) = (1 + rng.below(12), 1 + rng.below(12));
        let classes = 2 + rng.below(6);
        let (p, g) = (random_mask(&mut rng, h, w, classes), random_mask(&mut rng, h, w, classes));
        let mut ab = ConfusionAccumulator::new(classes);
        ab.add(&p, &g).unwrap();
        let mut ba = ConfusionAccumulator::new(classes);
        ba.add(&g, &p).unwrap();
        for c in 0..classes {
            prop_assert_eq!(ab.iou(c), ba.iou(c));
        }
    }

    #[test]
    fn miou_matches_set_computation(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let classes = 2 + rng.below(13);
        let images = 1 + rng.below(4);
        let (h, w) = (1 + rng.below(16), 1 + rng.below(16));
        let mut acc = ConfusionAccumulator::new(classes);
        let mut pred_sets = vec![HashSet::new(); classes];
        let mut true_sets = vec![HashSet::new(); classes];
        for img in 0..images {
            let (p, g) = (random_mask(&mut rng, h, w, classes), random_mask(&mut rng, h, w, classes));
            acc.add(&p, &g).unwrap();
            for y in 0..h {
                for x in 0..w {
                    pred_sets[p.get(y, x) as usize].insert((img, y, x));
                    true_sets[g.get(y, x) as usize].insert((img, y, x));
                }
            }
        }
        let ious: Vec<f64> = (1..classes)
            .filter_map(|c| {
                let union = pred_sets[c].union(&true_sets[c]).count();
                let inter = pred_sets[c].intersection(&true_sets[c]).count();
                (union > 0).then(|| inter as f64 / union as f64)
            })
            .collect();
        let expected = (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64);
        prop_assert_eq!(acc.miou(), expected);
    }

    #[test]
    fn merging_accumulators_equals_accumulating_everything(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let classes = 2 + rng.below(6);
        let pairs: Vec<(SegMask, SegMask)> = (0..4)
            .map(|_| (random_mask(&mut rng, 5, 7, classes), random_mask(&mut rng, 5, 7, classes)))
            .collect();
        let mut all = ConfusionAccumulator::new(classes);
        let mut left = ConfusionAccumulator::new(classes);
        let mut right = ConfusionAccumulator::new(classes);
        for (i, (p, g)) in pairs.iter().enumerate() {
            all.add(p, g).unwrap();
            if i % 2 == 0 { left.add(p, g).unwrap() } else { right.add(p, g).unwrap() }
        }
        let mut lr = left.clone();
        lr.merge(&right).unwrap();
        let mut rl = right;
        rl.merge(&left).unwrap();
        prop_assert_eq!(&lr, &all);
        prop_assert_eq!(&rl, &all);
    }

    #[test]
    fn growing_overlap_never_raises_dice_loss(len in 1usize..8, gap in 0usize..8) {
        let width = 3 * len + 8;
        let block = |start: usize| {
            SegMask::new(1, width, (0..width).map(|x| u8::from(x >= start && x < start + len)).collect()).unwrap()
        };
        let target = block(0);
        let mut last = f64::INFINITY;
        for shift in (0..=len + gap).rev() {
            let loss = hard_dice_loss(&block(shift), &target, 2).unwrap();
            prop_assert!(loss <= last, "shift {shift}: {loss} > {last}");
            prop_assert!((0.0..=1.0 + 1e-6).contains(&loss));
            last = loss;
        }
        prop_assert!(last.abs() <= 2e-6);
    }

    #[test]
    fn cross_entropy_is_non_negative(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let classes = 2 + rng.below(13);
        let (h, w) = (1 + rng.below(5), 1 + rng.below(5));
        let logits = uniform(&mut rng, &[2, classes, h, w], -20.0, 20.0);
        let targets = vec![random_mask(&mut rng, h, w, classes), random_mask(&mut rng, h, w, classes)];
        let tape = Tape::no_grad();
        let ce = ce_loss(tape.constant(logits), &targets).unwrap().value().item().unwrap();
        prop_assert!(ce >= 0.0);
    }

    #[test]
    fn cosine_schedule_never_increases(total in 1usize..100_000, a in any::<u64>(), b in any::<u64>(), lo in 0.0f64..1e-3, span in 0.0f64..1e-2) {
        let s = Schedule::new(lo, lo + span, total).unwrap();
        let (t1, t2) = ((a % (total as u64 + 1)) as usize, (b % (total as u64 + 1)) as usize);
        let (t1, t2) = (t1.min(t2), t1.max(t2));
        let (l1, l2) = (s.lr(t1).unwrap(), s.lr(t2).unwrap());
        prop_assert!(l1 >= l2, "lr({t1}) = {l1} < lr({t2}) = {l2}");
        prop_assert!(l2 >= lo && l1 <= lo + span);
    }

    #[test]
    fn adam_with_zero_gradients_is_identity(seed in any::<u64>(), warmup in 0usize..5) {
        let mut rng = Rng::new(seed);
        let (inputs, outputs) = (1 + rng.below(5), 1 + rng.below(5));
        let mut layer = DenseLayer::<f32>::new(&mut rng, inputs, outputs);
        let mut adam = Adam::new(AdamHyper::default());
        let shapes: Vec<Vec<usize>> = layer.named_params().iter().map(|(_, t)| t.shape().to_vec()).collect();
        for _ in 0..warmup {
            let grads: Vec<Tensor<f32>> = shapes.iter().map(|s| uniform(&mut rng, s, -1.0, 1.0).cast()).collect();
            adam.step(&mut layer, &grads, 1e-2).unwrap();
        }
        let before = layer.named_params();
        let zeros: Vec<Tensor<f32>> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        adam.step(&mut layer, &zeros, 1e-2).unwrap();
        prop_assert_eq!(layer.named_params(), before);
    }
}

fn arb_config() -> impl Strategy<Value = Config> {
    let model = (
        2usize..=14,
        1usize..4,
        prop::array::uniform4(1usize..300),
        any::<bool>(),
        1usize..32,
        any::<bool>(),
        prop::collection::vec(1usize..40, 1..6),
        prop::collection::vec(1usize..40, 1..6),
        (1usize..300, 1usize..300, 1usize..300, 1usize..300, 1usize..300, 1usize..40),
    )
        .prop_map(|(nc, ic, bw, att, red, dense, dr, pr, (inter, growth, out, low, dec, size))| ModelConfig {
            num_classes: nc,
            in_channels: ic,
            backbone_widths: bw,
            attention: att,
            reduction: red,
            aspp_mode: if dense { AsppMode::Dense } else { AsppMode::Plain },
            dense_rates: dr,
            plain_rates: pr,
            aspp_inter: inter,
            aspp_growth: growth,
            aspp_out: out,
            low_level_channels: low,
            decoder_width: dec,
            input_size: 16 * size,
        });
    let train = (1usize..64, 0usize..1000, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 1e-12f64..1.0)
        .prop_map(|(batch, epochs, lo, span, b1, b2, eps)| TrainSettings {
            batch_size: batch,
            epochs,
            lr_min: lo,
            lr_max: lo + span,
            adam: AdamHyper { beta1: b1, beta2: b2, eps },
        });
    (any::<bool>(), model, train).prop_map(|(paper, model, train)| Config {
        preset: if paper { Preset::Paper } else { Preset::Desk },
        model,
        train,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn config_render_then_parse_is_identity(c in arb_config()) {
        let text = render_config(&c);
        prop_assert_eq!(parse_config(&text).unwrap(), c);
    }

    #[test]
    fn tensor_records_round_trip_bit_exactly(
        shape in prop::collection::vec(1usize..5, 0..4),
        bits in prop::collection::vec(any::<u64>(), 256),
        wide in any::<bool>(),
    ) {
        let n: usize = shape.iter().product();
        let mut buf = Vec::new();
        if wide {
            let t = Tensor::new(&shape, bits[..n].iter().map(|&b| f64::from_bits(b)).collect()).unwrap();
            write_tensor(&mut buf, &t).unwrap();
            let AnyTensor::F64(back) = read_tensor(&mut buf.as_slice()).unwrap() else {
                return Err(TestCaseError::fail("dtype changed"));
            };
            prop_assert_eq!(back.shape(), t.shape());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        } else {
            let t = Tensor::new(&shape, bits[..n].iter().map(|&b| f32::from_bits(b as u32)).collect()).unwrap();
            write_tensor(&mut buf, &t).unwrap();
            let AnyTensor::F32(back) = read_tensor(&mut buf.as_slice()).unwrap() else {
                return Err(TestCaseError::fail("dtype changed"));
            };
            prop_assert_eq!(back.shape(), t.shape());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
            let mut again = Vec::new();
            write_tensor(&mut again, &back).unwrap();
            prop_assert_eq!(again, buf);
        }
    }

    #[test]
    fn masks_round_trip(seed in any::<u64>(), h in 1usize..20, w in 1usize..20) {
        let m = random_mask(&mut Rng::new(seed), h, w, 14);
        let mut buf = Vec::new();
        write_mask(&mut buf, &m).unwrap();
        let back = read_mask(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.histogram(), m.histogram());
        prop_assert_eq!(back, m);
    }
}

//! Cross-entropy + soft Dice objective.

use crate::autograd::{ReduceOp, Var};
use crate::error::{contract_err, dim_err, Result};
use crate::float::Float;
use crate::model::argmax_masks;
use crate::segmask::SegMask;
use crate::tensor::Tensor;

pub const DICE_EPS: f64 = 1e-6;

/// The three loss values from one evaluation; `total = ce + dice`.
#[derive(Clone, Copy)]
pub struct LossParts<'t, T> {
    pub ce: Var<'t, T>,
    pub dice: Var<'t, T>,
    pub total: Var<'t, T>,
}

/// N×C×H×W one-hot encoding of a batch of masks.
pub fn one_hot<T: Float>(targets: &[SegMask], num_classes: usize) -> Result<Tensor<T>> {
    let Some(first) = targets.first() else {
        return dim_err("empty target batch");
    };
    let (h, w) = (first.height(), first.width());
    let plane = h * w;
    let mut out = Tensor::zeros(&[targets.len(), num_classes, h, w]);
    let data = out.data_mut();
    for (b, m) in targets.iter().enumerate() {
        if m.height() != h || m.width() != w {
            return dim_err("target masks differ in size");
        }
        m.check_classes(num_classes)?;
        for (p, &c) in m.data().iter().enumerate() {
            data[(b * num_classes + c as usize) * plane + p] = T::ONE;
        }
    }
    Ok(out)
}

fn check_batch<T: Float>(logits: &Var<'_, T>, targets: &[SegMask]) -> Result<usize> {
    let s = logits.shape();
    if s.len() != 4 {
        return dim_err(format!("logits must be N×C×H×W, got {s:?}"));
    }
    if targets.len() != s[0] {
        return dim_err(format!("{} targets for a batch of {}", targets.len(), s[0]));
    }
    for m in targets {
        if m.height() != s[2] || m.width() != s[3] {
            return dim_err(format!(
                "target {}×{} does not match logits {}×{}",
                m.height(),
                m.width(),
                s[2],
                s[3]
            ));
        }
        m.check_classes(s[1])?;
    }
    Ok(s[1])
}

/// Mean over every (image, pixel) of `−log softmax(logits)[true class]`.
pub fn ce_loss<'t, T: Float>(logits: Var<'t, T>, targets: &[SegMask]) -> Result<Var<'t, T>> {
    let c = check_batch(&logits, targets)?;
    let y = logits.tape().constant(one_hot(targets, c)?);
    let positions = logits.value().numel() / c;
    let picked = logits.log_softmax(1)?.mul(y)?.sum_all();
    Ok(picked.scale(-1.0 / positions as f64))
}

/// Soft Dice on probabilities `p` against one-hot `y`, both N×C×H×W.
///
/// A foreground class takes part when the target contains it or when it wins
/// the argmax at some pixel of `p`; the result is the mean over those classes
/// and 0 when there are none.
pub fn soft_dice<'t, T: Float>(p: Var<'t, T>, y: &Tensor<T>) -> Result<Var<'t, T>> {
    if p.shape() != y.shape() || y.rank() != 4 {
        return dim_err(format!("soft Dice shapes {:?} vs {:?}", p.shape(), y.shape()));
    }
    let c = y.shape()[1];
    let tape = p.tape();
    let predicted = argmax_masks(&p.value())?;
    let mut included = vec![false; c];
    for m in &predicted {
        for &v in m.data() {
            included[v as usize] = true;
        }
    }
    let (h, w) = (y.shape()[2], y.shape()[3]);
    let y_sum: Vec<f64> = (0..c)
        .map(|k| {
            (0..y.shape()[0])
                .map(|b| {
                    let start = (b * c + k) * h * w;
                    y.data()[start..start + h * w].iter().map(|v| v.to_f64()).sum::<f64>()
                })
                .sum()
        })
        .collect();
    for k in 0..c {
        if y_sum[k] > 0.0 {
            included[k] = true;
        }
    }
    included[0] = false;
    let count = included.iter().filter(|&&b| b).count();
    if count == 0 {
        return Ok(tape.constant(Tensor::scalar(T::ZERO)));
    }
    let weights = Tensor::from_fn(&[c], |k| {
        if included[k] {
            T::from_f64(1.0 / count as f64)
        } else {
            T::ZERO
        }
    });
    let yv = tape.constant(y.clone());
    let axes = [0, 2, 3];
    let inter = p.mul(yv)?.reduce(ReduceOp::Sum, &axes, false)?;
    let p_sum = p.reduce(ReduceOp::Sum, &axes, false)?;
    let y_sum = tape.constant(Tensor::from_fn(&[c], |k| T::from_f64(y_sum[k])));
    let ratio = inter
        .scale(2.0)
        .add_scalar(DICE_EPS)
        .div(p_sum.add(y_sum)?.add_scalar(DICE_EPS))?;
    let weighted = ratio.mul(tape.constant(weights))?.sum_all();
    Ok(weighted.neg().add_scalar(1.0))
}

pub fn dice_loss<'t, T: Float>(logits: Var<'t, T>, targets: &[SegMask]) -> Result<Var<'t, T>> {
    let c = check_batch(&logits, targets)?;
    soft_dice(logits.softmax(1)?, &one_hot(targets, c)?)
}

pub fn total_loss<'t, T: Float>(logits: Var<'t, T>, targets: &[SegMask]) -> Result<LossParts<'t, T>> {
    let ce = ce_loss(logits, targets)?;
    let dice = dice_loss(logits, targets)?;
    Ok(LossParts {
        ce,
        dice,
        total: ce.add(dice)?,
    })
}

/// Dice loss between two hard masks, treating the prediction as one-hot
/// probabilities.
pub fn hard_dice_loss(pred: &SegMask, target: &SegMask, num_classes: usize) -> Result<f64> {
    if pred.height() != target.height() || pred.width() != target.width() {
        return dim_err("mask sizes differ");
    }
    if num_classes < 2 {
        return contract_err("need at least two classes");
    }
    let tape = crate::autograd::Tape::<f64>::no_grad();
    let p = tape.constant(one_hot(std::slice::from_ref(pred), num_classes)?);
    let y = one_hot(std::slice::from_ref(target), num_classes)?;
    soft_dice(p, &y)?.value().item()
}

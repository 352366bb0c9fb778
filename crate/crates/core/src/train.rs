//! Mini-batch training with Adam and per-step cosine annealing.

use std::fmt;

use crate::autograd::Tape;
use crate::data::SyntheticScene;
use crate::error::{dim_err, Error, Result};
use crate::float::Float;
use crate::loss::total_loss;
use crate::metrics::ConfusionAccumulator;
use crate::model::DcdModel;
use crate::nn::Module;
use crate::optim::{param_grads, Adam, AdamHyper, Schedule, LR_MAX, LR_MIN};
use crate::rng::Rng;
use crate::segmask::SegMask;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    pub adam: AdamHyper,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            batch_size: 4,
            epochs: 6,
            lr_min: LR_MIN,
            lr_max: LR_MAX,
            adam: AdamHyper::default(),
        }
    }
}

/// One image (C×H×W) with its label map.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub mask: SegMask,
}

impl From<SyntheticScene> for Sample {
    fn from(s: SyntheticScene) -> Self {
        Sample {
            image: s.image,
            mask: s.mask,
        }
    }
}

/// Input images live in [0, 1]; the network sees them shifted and scaled
/// to [-2, 2].
pub const INPUT_CENTER: f64 = 0.5;
pub const INPUT_SCALE: f64 = 4.0;

/// Stacks normalized samples into an N×C×H×W batch.
pub fn stack_images<T: Float>(samples: &[&Sample]) -> Result<Tensor<T>> {
    for s in samples {
        let shape = s.image.shape();
        if shape.len() == 3 && (s.mask.height() != shape[1] || s.mask.width() != shape[2]) {
            return dim_err("mask does not match its image");
        }
    }
    let images: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.image).collect();
    input_batch(&images)
}

/// Normalizes C×H×W images in [0, 1] into an N×C×H×W network input.
pub fn input_batch<T: Float>(images: &[&Tensor<f32>]) -> Result<Tensor<T>> {
    let Some(first) = images.first() else {
        return dim_err("empty batch");
    };
    let shape = first.shape().to_vec();
    if shape.len() != 3 {
        return dim_err(format!("images must be C×H×W, got {shape:?}"));
    }
    let mut data = Vec::with_capacity(images.len() * first.numel());
    for img in images {
        if img.shape() != shape.as_slice() {
            return dim_err("images in a batch differ in shape");
        }
        data.extend(img.data().iter().map(|&v| T::from_f64((v as f64 - INPUT_CENTER) * INPUT_SCALE)));
    }
    Tensor::new(&[images.len(), shape[0], shape[1], shape[2]], data)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub ce: f64,
    pub dice: f64,
    pub total: f64,
}

/// Forward, loss, backward and one optimizer update. `step` is only used in
/// the diagnostic of a non-finite loss.
pub fn train_step<T: Float>(
    model: &mut DcdModel<T>,
    optim: &mut Adam<T>,
    images: &Tensor<T>,
    masks: &[SegMask],
    lr: f64,
    step: usize,
) -> Result<StepLoss> {
    let (loss, grads) = {
        let tape = Tape::new();
        let logits = model.forward(tape.constant(images.clone()))?;
        let parts = total_loss(logits, masks)?;
        let loss = StepLoss {
            ce: parts.ce.value().item()?.to_f64(),
            dice: parts.dice.value().item()?.to_f64(),
            total: parts.total.value().item()?.to_f64(),
        };
        if !loss.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                lr,
                ce: loss.ce,
                dice: loss.dice,
                total: loss.total,
            });
        }
        let grads = tape.backward(parts.total)?;
        (loss, param_grads(model, &grads))
    };
    optim.step(model, &grads, lr)?;
    Ok(loss)
}

/// Accumulated IoU counts of `model` over `samples`.
pub fn evaluate<T: Float>(model: &DcdModel<T>, samples: &[Sample], batch_size: usize) -> Result<ConfusionAccumulator> {
    let mut acc = ConfusionAccumulator::new(model.config().num_classes);
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let preds = model.predict(&stack_images(&refs)?)?;
        for (p, s) in preds.iter().zip(chunk) {
            acc.add(p, &s.mask)?;
        }
    }
    Ok(acc)
}

/// Per-epoch summary: mean training losses and validation mIoU.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps completed so far.
    pub step: usize,
    /// Learning rate of the last step in the epoch.
    pub lr: f64,
    pub ce: f64,
    pub dice: f64,
    pub total: f64,
    pub val_miou: Option<f64>,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch, step, lr, ce, dice, total, val_miou";
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let miou = self.val_miou.map_or("nan".to_string(), |v| format!("{v:.6}"));
        write!(
            f,
            "{}, {}, {:.6e}, {:.6}, {:.6}, {:.6}, {}",
            self.epoch, self.step, self.lr, self.ce, self.dice, self.total, miou
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub model: DcdModel<T>,
    pub optim: Adam<T>,
    pub step: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub state: TrainState<T>,
    pub log: Vec<EpochLog>,
    /// Best validation mIoU and the parameters that reached it.
    pub best: Option<(f64, DcdModel<T>)>,
}

/// Runs `settings.epochs` passes over `train` in an order shuffled by `rng`.
/// `on_epoch` sees each log entry, the current model and whether it is the
/// best so far on `val`.
pub fn train<T: Float>(
    model: DcdModel<T>,
    settings: &TrainSettings,
    train: &[Sample],
    val: &[Sample],
    rng: &mut Rng,
    on_epoch: &mut dyn FnMut(&EpochLog, &DcdModel<T>, bool) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    if train.is_empty() {
        return dim_err("training set is empty");
    }
    let batch = settings.batch_size.max(1);
    let steps_per_epoch = train.len().div_ceil(batch);
    let schedule = Schedule::new(settings.lr_min, settings.lr_max, settings.epochs * steps_per_epoch)?;
    let mut state = TrainState {
        model,
        optim: Adam::new(settings.adam),
        step: 0,
    };
    let mut log = Vec::with_capacity(settings.epochs);
    let mut best: Option<(f64, DcdModel<T>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=settings.epochs {
        rng.shuffle(&mut order);
        let (mut ce, mut dice, mut total, mut lr) = (0.0, 0.0, 0.0, settings.lr_max);
        for idx in order.chunks(batch) {
            let samples: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let images = stack_images::<T>(&samples)?;
            let masks: Vec<SegMask> = samples.iter().map(|s| s.mask.clone()).collect();
            lr = schedule.lr(state.step)?;
            let l = train_step(&mut state.model, &mut state.optim, &images, &masks, lr, state.step)?;
            state.step += 1;
            ce += l.ce;
            dice += l.dice;
            total += l.total;
        }
        let n = steps_per_epoch as f64;
        let val_miou = if val.is_empty() {
            None
        } else {
            evaluate(&state.model, val, batch)?.miou()
        };
        let entry = EpochLog {
            epoch,
            step: state.step,
            lr,
            ce: ce / n,
            dice: dice / n,
            total: total / n,
            val_miou,
        };
        let improved = match (val_miou, &best) {
            (Some(v), Some((b, _))) => v > *b,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if improved {
            best = Some((val_miou.unwrap_or_default(), state.model.clone()));
        }
        on_epoch(&entry, &state.model, improved)?;
        log.push(entry);
    }
    Ok(TrainOutcome { state, log, best })
}

/// Parameter-wise equality, used for reproducibility checks.
pub fn same_parameters<T: Float>(a: &DcdModel<T>, b: &DcdModel<T>) -> bool {
    a.named_params() == b.named_params()
}

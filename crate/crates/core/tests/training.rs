use dcd::data::generate_dataset;
use dcd::model::{DcdModel, ModelConfig};
use dcd::nn::Module;
use dcd::optim::{Adam, AdamHyper, Schedule, LR_MAX, LR_MIN};
use dcd::train::{evaluate, stack_images, train, train_step, Sample, TrainSettings};
use dcd::{Rng, SegMask, Tensor};

fn samples(seed: u64, n: usize, size: usize, k: usize) -> Vec<Sample> {
    generate_dataset(seed, n, size, k)
        .unwrap()
        .into_iter()
        .map(Sample::from)
        .collect()
}

fn batch(data: &[Sample]) -> (Tensor<f32>, Vec<SegMask>) {
    let refs: Vec<&Sample> = data.iter().collect();
    (stack_images(&refs).unwrap(), data.iter().map(|s| s.mask.clone()).collect())
}

fn small() -> ModelConfig {
    ModelConfig {
        backbone_widths: [8, 8, 16, 16],
        aspp_inter: 8,
        aspp_growth: 4,
        aspp_out: 8,
        low_level_channels: 4,
        decoder_width: 8,
        reduction: 4,
        input_size: 32,
        ..ModelConfig::default()
    }
}

#[test]
fn frozen_batch_loss_strictly_decreases_for_ten_steps() {
    let data = samples(3, 4, 64, 4);
    let (images, masks) = batch(&data);
    let mut model = DcdModel::<f32>::new(&ModelConfig::default(), &Rng::new(3)).unwrap();
    let mut optim = Adam::new(AdamHyper::default());
    let mut losses = Vec::new();
    for step in 0..11 {
        losses.push(train_step(&mut model, &mut optim, &images, &masks, LR_MAX, step).unwrap().total);
    }
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "loss went up: {losses:?}");
    }
}

#[test]
fn two_hundred_step_toy_run_lowers_the_loss() {
    let data = samples(11, 100, 64, 4);
    let mut model = DcdModel::<f32>::new(&ModelConfig::default(), &Rng::new(11)).unwrap();
    let mut optim = Adam::new(AdamHyper::default());
    let steps = 200;
    let schedule = Schedule::new(LR_MIN, LR_MAX, steps).unwrap();
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let start = (step * 4) % data.len();
        let (images, masks) = batch(&data[start..start + 4]);
        let lr = schedule.lr(step).unwrap();
        losses.push(train_step(&mut model, &mut optim, &images, &masks, lr, step).unwrap().total);
    }
    let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = losses[steps - 10..].iter().sum::<f64>() / 10.0;
    assert!(losses[steps - 1] < losses[0], "{} -> {}", losses[0], losses[steps - 1]);
    assert!(tail < 0.5 * head, "first ten {head}, last ten {tail}");
}

#[test]
fn training_is_reproducible_single_threaded() {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let data = samples(5, 8, 32, 3);
    let settings = TrainSettings {
        epochs: 2,
        ..TrainSettings::default()
    };
    let run = || {
        pool.install(|| {
            let model = DcdModel::<f32>::new(&small(), &Rng::new(9)).unwrap();
            train(model, &settings, &data, &data[..2], &mut Rng::new(9), &mut |_, _, _| Ok(())).unwrap()
        })
    };
    let a = run();
    let b = run();
    assert_eq!(a.log, b.log);
    assert_eq!(a.state.model.named_params(), b.state.model.named_params());
}

#[test]
fn best_model_is_the_one_with_highest_logged_miou() {
    let train_set = samples(21, 16, 32, 3);
    let val = samples(22, 4, 32, 3);
    let settings = TrainSettings {
        epochs: 4,
        ..TrainSettings::default()
    };
    let model = DcdModel::<f32>::new(&small(), &Rng::new(21)).unwrap();
    let mut improved_epochs = Vec::new();
    let out = train(model, &settings, &train_set, &val, &mut Rng::new(21), &mut |log, _, improved| {
        if improved {
            improved_epochs.push(log.epoch);
        }
        Ok(())
    })
    .unwrap();

    let logged: Vec<f64> = out.log.iter().map(|l| l.val_miou.unwrap()).collect();
    let max = logged.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (best, best_model) = out.best.as_ref().unwrap();
    assert_eq!(*best, max);
    assert_eq!(evaluate(best_model, &val, 4).unwrap().miou(), Some(max));
    assert_eq!(improved_epochs[0], 1);
    let first_max = logged.iter().position(|&v| v == max).unwrap() + 1;
    assert_eq!(*improved_epochs.last().unwrap(), first_max);
    assert_eq!(out.log.last().unwrap().step, 16);
}

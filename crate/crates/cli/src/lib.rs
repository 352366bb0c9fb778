//! The `dcd` command line: training, evaluation, prediction, receptive-field
//! arithmetic, the gradient suite and synthetic data generation.
//!
//! [`run`] is the whole program; `main` only forwards the process arguments
//! and exit status, so integration tests can drive it in-process.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dcd::aspp::{receptive_field, BRANCH_KERNEL};
use dcd::data::generate_dataset;
use dcd::error::{Error, Result};
use dcd::gradsuite::{run_suite, GRAD_TOLERANCE};
use dcd::io::{
    load_checkpoint, load_gray_image, load_mask, parse_config, render_config, save_checkpoint,
    save_gray_image, save_mask, write_overlay, ClassTable, Config,
};
use dcd::metrics::ConfusionAccumulator;
use dcd::model::{DcdModel, OUTPUT_STRIDE};
use dcd::train::{evaluate, input_batch, train, EpochLog, Sample};
use dcd::Rng;
use rayon::prelude::*;

pub const CHECKPOINT_FILE: &str = "checkpoint.dcdt";
pub const LOG_FILE: &str = "train.log";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Parser, Debug)]
#[command(name = "dcd", version, about = "Dense-ASPP + CBAM segmentation")]
struct Cli {
    /// Seed for every random choice (weight init, shuffling, synthesis).
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and keep the checkpoint with the best validation mIoU.
    Train {
        /// Config file; the desk preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root: `train/` and `val/` splits, or a single split.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-structure IoU report of a checkpoint, or of saved predictions.
    Eval {
        #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Directory of predicted masks named like the ground-truth masks.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        expect: ExpectConfig,
    },
    /// Segment one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask_out: PathBuf,
        #[arg(long)]
        overlay_out: PathBuf,
        /// Overlay opacity of the class colors.
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[command(flatten)]
        expect: ExpectConfig,
    },
    /// Receptive fields of 3×3 branches at the given dilation rates.
    Rf {
        #[arg(long, value_delimiter = ',', default_value = "3,6,12,18")]
        rates: Vec<usize>,
    },
    /// Finite-difference check of every differentiable block in f64.
    Gradcheck,
    /// Write a synthetic dataset with `train/` and `val/` splits.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 400)]
        train: usize,
        #[arg(long, default_value_t = 50)]
        val: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Foreground structures per scene.
        #[arg(long, default_value_t = 4)]
        structures: usize,
    },
}

#[derive(Args, Debug)]
struct ExpectConfig {
    /// Refuse to run unless the checkpoint's architecture equals this config's.
    #[arg(long = "config")]
    config: Option<PathBuf>,
}

/// Runs the program on `args` (including the program name), writing normal
/// output to `out` and diagnostics to `err`. Returns the exit status: 0 on
/// success, 2 on usage errors, 1 on any other failure.
pub fn run<I, S>(args: I, out: &mut (dyn Write + Send), err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli, out)),
            Err(e) => Err(Error::Contract(format!("cannot start {n} threads: {e}"))),
        },
        None => dispatch(&cli, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn dispatch(cli: &Cli, out: &mut (dyn Write + Send)) -> Result<()> {
    match &cli.command {
        Command::Train { config, data, out: dir } => cmd_train(config.as_deref(), data, dir, cli.seed, out),
        Command::Eval {
            checkpoint,
            predictions,
            data,
            expect,
        } => match (checkpoint, predictions) {
            (_, Some(p)) => cmd_eval_predictions(p, data, out),
            (Some(c), None) => cmd_eval_checkpoint(c, data, expect, out),
            (None, None) => Err(Error::Contract("eval needs --checkpoint or --predictions".into())),
        },
        Command::Predict {
            checkpoint,
            image,
            mask_out,
            overlay_out,
            alpha,
            expect,
        } => cmd_predict(checkpoint, image, mask_out, overlay_out, *alpha, expect, out),
        Command::Rf { rates } => cmd_rf(rates, out),
        Command::Gradcheck => cmd_gradcheck(out),
        Command::Synth {
            out: dir,
            train,
            val,
            size,
            structures,
        } => cmd_synth(dir, *train, *val, *size, *structures, cli.seed, out),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn read_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => parse_config(&fs::read_to_string(p).map_err(|e| io_err(p, e))?),
        None => Ok(Config::default()),
    }
}

/// A split directory holds `images/` and `masks/`; files pair up by stem.
fn split_dir(root: &Path) -> Option<PathBuf> {
    root.join("images").is_dir().then(|| root.to_path_buf())
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn find_by_stem(dir: &Path, stem_name: &str) -> Result<PathBuf> {
    for ext in ["pgm", "pnm"] {
        let p = dir.join(format!("{stem_name}.{ext}"));
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Contract(format!(
        "no mask named `{stem_name}` in {}",
        dir.display()
    )))
}

fn load_split(dir: &Path) -> Result<Vec<(String, Sample)>> {
    let masks = dir.join("masks");
    let mut out = Vec::new();
    for image_path in sorted_files(&dir.join("images"))? {
        let name = stem(&image_path);
        let image = load_gray_image(&image_path)?;
        let mask = load_mask(find_by_stem(&masks, &name)?)?;
        if image.shape()[1] != mask.height() || image.shape()[2] != mask.width() {
            return Err(Error::Dimension(format!(
                "`{name}`: image is {}x{}, mask is {}x{}",
                image.shape()[2],
                image.shape()[1],
                mask.width(),
                mask.height()
            )));
        }
        out.push((name, Sample { image, mask }));
    }
    if out.is_empty() {
        return Err(Error::Contract(format!("no images in {}", dir.join("images").display())));
    }
    Ok(out)
}

fn check_extent(name: &str, h: usize, w: usize) -> Result<()> {
    if h % OUTPUT_STRIDE != 0 || w % OUTPUT_STRIDE != 0 || h == 0 || w == 0 {
        return Err(Error::Dimension(format!(
            "`{name}` is {w}x{h}; both sides must be positive multiples of {OUTPUT_STRIDE}"
        )));
    }
    Ok(())
}

fn cmd_train(config: Option<&Path>, data: &Path, dir: &Path, seed: u64, out: &mut dyn Write) -> Result<()> {
    let cfg = read_config(config)?;
    let (train_dir, val_dir) = match (split_dir(&data.join("train")), split_dir(&data.join("val"))) {
        (Some(t), v) => (t, v),
        (None, _) => match split_dir(data) {
            Some(d) => (d, None),
            None => {
                return Err(Error::Contract(format!(
                    "{} has neither train/ nor images/",
                    data.display()
                )))
            }
        },
    };
    let train_set: Vec<Sample> = load_split(&train_dir)?.into_iter().map(|(_, s)| s).collect();
    let val_set: Vec<Sample> = match val_dir {
        Some(v) => load_split(&v)?.into_iter().map(|(_, s)| s).collect(),
        None => Vec::new(),
    };
    for s in train_set.iter().chain(&val_set) {
        check_extent("training image", s.mask.height(), s.mask.width())?;
    }

    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    fs::write(dir.join(CONFIG_FILE), render_config(&cfg)).map_err(|e| io_err(dir, e))?;
    let log_path = dir.join(LOG_FILE);
    let mut log = fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    writeln!(log, "{}", EpochLog::HEADER)?;
    writeln!(out, "{}", EpochLog::HEADER)?;

    let model = DcdModel::<f32>::new(&cfg.model, &Rng::new(seed))?;
    let mut order_rng = Rng::new(seed).fork(1);
    let ckpt = dir.join(CHECKPOINT_FILE);
    let keep_last = val_set.is_empty();
    train(
        model,
        &cfg.train,
        &train_set,
        &val_set,
        &mut order_rng,
        &mut |entry, model, improved| {
            writeln!(log, "{entry}")?;
            log.flush()?;
            writeln!(out, "{entry}")?;
            if improved || keep_last {
                save_checkpoint(&ckpt, model, &cfg)?;
            }
            Ok(())
        },
    )?;
    writeln!(out, "checkpoint: {}", ckpt.display())?;
    Ok(())
}

/// Loads the checkpoint, checking it against `--config` when one is given.
fn load_model(path: &Path, expect: &ExpectConfig) -> Result<DcdModel<f32>> {
    let ckpt = load_checkpoint(path)?;
    if let Some(p) = &expect.config {
        let want = read_config(Some(p))?;
        if want.model != ckpt.config.model {
            return Err(Error::ConfigMismatch(format!(
                "{} was trained with a different architecture than {}",
                path.display(),
                p.display()
            )));
        }
    }
    ckpt.to_model()
}

fn eval_split(data: &Path) -> Result<PathBuf> {
    split_dir(data)
        .or_else(|| split_dir(&data.join("val")))
        .ok_or_else(|| Error::Contract(format!("{} has neither images/ nor val/", data.display())))
}

fn cmd_eval_checkpoint(path: &Path, data: &Path, expect: &ExpectConfig, out: &mut dyn Write) -> Result<()> {
    let model = load_model(path, expect)?;
    let samples: Vec<Sample> = load_split(&eval_split(data)?)?.into_iter().map(|(_, s)| s).collect();
    let in_ch = model.config().in_channels;
    for s in &samples {
        check_extent("evaluation image", s.mask.height(), s.mask.width())?;
        if s.image.shape()[0] != in_ch {
            return Err(Error::ConfigMismatch(format!(
                "model expects {in_ch} input channels, images have {}",
                s.image.shape()[0]
            )));
        }
    }
    let acc = samples
        .par_iter()
        .map(|s| evaluate(&model, std::slice::from_ref(s), 1))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .try_fold(ConfusionAccumulator::new(model.config().num_classes), |mut a, b| {
            a.merge(&b)?;
            Ok::<_, Error>(a)
        })?;
    write!(out, "{}", acc.report(&ClassTable::standard()))?;
    Ok(())
}

fn cmd_eval_predictions(pred_dir: &Path, data: &Path, out: &mut dyn Write) -> Result<()> {
    let split = eval_split(data)?;
    let masks = split.join("masks");
    let mut acc = ConfusionAccumulator::new(ClassTable::standard().entries().len() + 1);
    let truth_files = sorted_files(&masks)?;
    if truth_files.is_empty() {
        return Err(Error::Contract(format!("no masks in {}", masks.display())));
    }
    for truth_path in truth_files {
        let name = stem(&truth_path);
        let truth = load_mask(&truth_path)?;
        let pred = load_mask(find_by_stem(pred_dir, &name)?)?;
        acc.add(&pred, &truth)?;
    }
    write!(out, "{}", acc.report(&ClassTable::standard()))?;
    Ok(())
}

fn cmd_predict(
    checkpoint: &Path,
    image_path: &Path,
    mask_out: &Path,
    overlay_out: &Path,
    alpha: f64,
    expect: &ExpectConfig,
    out: &mut dyn Write,
) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Contract(format!("alpha = {alpha} is outside [0, 1]")));
    }
    let model = load_model(checkpoint, expect)?;
    let image = load_gray_image(image_path)?;
    let in_ch = model.config().in_channels;
    if image.shape()[0] != in_ch {
        return Err(Error::ConfigMismatch(format!(
            "model expects {in_ch} input channels, image has {}",
            image.shape()[0]
        )));
    }
    check_extent(&image_path.display().to_string(), image.shape()[1], image.shape()[2])?;
    let mask = model
        .predict(&input_batch::<f32>(&[&image])?)?
        .pop()
        .expect("one prediction per image");
    save_mask(mask_out, &mask)?;
    write_overlay(overlay_out, &image, &mask, &ClassTable::standard(), alpha)?;
    writeln!(out, "mask: {}", mask_out.display())?;
    writeln!(out, "overlay: {}", overlay_out.display())?;
    Ok(())
}

fn cmd_rf(rates: &[usize], out: &mut dyn Write) -> Result<()> {
    if rates.is_empty() {
        return Err(Error::Contract("--rates needs at least one value".into()));
    }
    for &r in rates {
        writeln!(out, "branch d={r}: {}", receptive_field(&[(BRANCH_KERNEL, r)])?)?;
    }
    for end in 2..=rates.len() {
        let chain: Vec<(usize, usize)> = rates[..end].iter().map(|&r| (BRANCH_KERNEL, r)).collect();
        let names: Vec<String> = rates[..end].iter().map(|r| r.to_string()).collect();
        writeln!(out, "chain d={}: {}", names.join("->"), receptive_field(&chain)?)?;
    }
    Ok(())
}

fn cmd_gradcheck(out: &mut dyn Write) -> Result<()> {
    let cases = run_suite()?;
    let mut failed = 0;
    for c in &cases {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        writeln!(out, "{verdict:4}  {:.3e}  {}", c.error, c.name)?;
        failed += usize::from(!c.passed());
    }
    writeln!(
        out,
        "{} of {} cases within {GRAD_TOLERANCE:e}",
        cases.len() - failed,
        cases.len()
    )?;
    if failed > 0 {
        return Err(Error::Numeric(format!("{failed} gradient cases exceed tolerance")));
    }
    Ok(())
}

fn cmd_synth(
    dir: &Path,
    n_train: usize,
    n_val: usize,
    size: usize,
    structures: usize,
    seed: u64,
    out: &mut dyn Write,
) -> Result<()> {
    for (split, count, split_seed) in [("train", n_train, seed), ("val", n_val, seed.wrapping_add(1000))] {
        let root = dir.join(split);
        for sub in ["images", "masks"] {
            let d = root.join(sub);
            fs::create_dir_all(&d).map_err(|e| io_err(&d, e))?;
        }
        for (i, scene) in generate_dataset(split_seed, count, size, structures)?.into_iter().enumerate() {
            let name = format!("{i:05}.pgm");
            save_gray_image(root.join("images").join(&name), &scene.image)?;
            save_mask(root.join("masks").join(&name), &scene.mask)?;
        }
        writeln!(out, "{split}: {count} scenes in {}", root.display())?;
    }
    Ok(())
}

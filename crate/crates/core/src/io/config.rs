//! `key = value` configuration text.
//!
//! Blank lines and `#` comments are ignored. `preset = desk|paper` selects
//! the base values wherever it appears; every other key overrides one field.

use std::fmt::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{AsppMode, ModelConfig, OUTPUT_STRIDE};
use crate::segmask::MAX_CLASS;
use crate::train::TrainSettings;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 64×64 inputs, batch 4, 6 epochs.
    Desk,
    /// 512×512 inputs, batch 8, 400 epochs.
    Paper,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub preset: Preset,
    pub model: ModelConfig,
    pub train: TrainSettings,
}

impl Default for Config {
    fn default() -> Self {
        Config::from_preset(Preset::Desk)
    }
}

impl Config {
    pub fn from_preset(preset: Preset) -> Self {
        let mut c = Config {
            preset,
            model: ModelConfig::default(),
            train: TrainSettings::default(),
        };
        if preset == Preset::Paper {
            c.model.input_size = 512;
            c.train.batch_size = 8;
            c.train.epochs = 400;
        }
        c
    }
}

const KEYS: &[&str] = &[
    "preset",
    "num_classes",
    "in_channels",
    "backbone_widths",
    "attention",
    "reduction",
    "aspp_mode",
    "dense_rates",
    "plain_rates",
    "aspp_inter",
    "aspp_growth",
    "aspp_out",
    "low_level_channels",
    "decoder_width",
    "input_size",
    "batch_size",
    "epochs",
    "lr_min",
    "lr_max",
    "beta1",
    "beta2",
    "adam_eps",
];

fn parse_err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        message: message.into(),
    })
}

fn number<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .or_else(|_| parse_err(line, format!("`{key}`: cannot parse `{v}`")))
}

fn positive(line: usize, key: &str, v: &str) -> Result<usize> {
    match number::<usize>(line, key, v)? {
        0 => parse_err(line, format!("`{key}` must be ≥ 1")),
        n => Ok(n),
    }
}

fn list(line: usize, key: &str, v: &str) -> Result<Vec<usize>> {
    let items = v
        .split(',')
        .map(|s| positive(line, key, s.trim()))
        .collect::<Result<Vec<_>>>()?;
    if items.is_empty() {
        return parse_err(line, format!("`{key}` needs at least one value"));
    }
    Ok(items)
}

fn unit_interval(line: usize, key: &str, v: &str, open_top: bool) -> Result<f64> {
    let x: f64 = number(line, key, v)?;
    let ok = x >= 0.0 && if open_top { x < 1.0 } else { x <= 1.0 };
    if !ok {
        return parse_err(line, format!("`{key}` = {x} is out of range"));
    }
    Ok(x)
}

fn rate(line: usize, key: &str, v: &str) -> Result<f64> {
    let x: f64 = number(line, key, v)?;
    if !(x.is_finite() && x >= 0.0) {
        return parse_err(line, format!("`{key}` must be finite and ≥ 0"));
    }
    Ok(x)
}

fn split_line(raw: &str) -> Option<(&str, &str)> {
    let content = raw.split('#').next().unwrap_or("").trim();
    if content.is_empty() {
        return None;
    }
    Some(match content.split_once('=') {
        Some((k, v)) => (k.trim(), v.trim()),
        None => (content, ""),
    })
}

pub fn parse_config(text: &str) -> Result<Config> {
    let mut preset = Preset::Desk;
    let mut seen: Vec<(&str, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let Some((key, value)) = split_line(raw) else { continue };
        if !raw.contains('=') {
            return parse_err(line, format!("expected `key = value`, found `{}`", raw.trim()));
        }
        if !KEYS.contains(&key) {
            return parse_err(line, format!("unknown key `{key}`"));
        }
        if let Some((_, first)) = seen.iter().find(|(k, _)| *k == key) {
            return parse_err(line, format!("`{key}` already set on line {first}"));
        }
        seen.push((key, line));
        if key == "preset" {
            preset = match value {
                "desk" => Preset::Desk,
                "paper" => Preset::Paper,
                _ => return parse_err(line, format!("unknown preset `{value}`")),
            };
        }
    }

    let mut c = Config::from_preset(preset);
    let mut rates_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let Some((key, v)) = split_line(raw) else { continue };
        let m = &mut c.model;
        let t = &mut c.train;
        match key {
            "preset" => {}
            "num_classes" => {
                let n = number::<usize>(line, key, v)?;
                if !(2..=MAX_CLASS as usize + 1).contains(&n) {
                    return parse_err(line, format!("`num_classes` must be in 2..=14, got {n}"));
                }
                m.num_classes = n;
            }
            "in_channels" => m.in_channels = positive(line, key, v)?,
            "backbone_widths" => {
                let w = list(line, key, v)?;
                m.backbone_widths = w
                    .try_into()
                    .or_else(|_| parse_err(line, "`backbone_widths` needs exactly 4 values"))?;
            }
            "attention" => {
                m.attention = match v {
                    "on" | "true" => true,
                    "off" | "false" => false,
                    _ => return parse_err(line, format!("`attention` must be on or off, got `{v}`")),
                }
            }
            "reduction" => m.reduction = positive(line, key, v)?,
            "aspp_mode" => {
                m.aspp_mode = match v {
                    "dense" => AsppMode::Dense,
                    "plain" => AsppMode::Plain,
                    _ => return parse_err(line, format!("`aspp_mode` must be dense or plain, got `{v}`")),
                };
                rates_line = rates_line.max(line);
            }
            "dense_rates" => {
                m.dense_rates = list(line, key, v)?;
                rates_line = rates_line.max(line);
            }
            "plain_rates" => {
                m.plain_rates = list(line, key, v)?;
                rates_line = rates_line.max(line);
            }
            "aspp_inter" => m.aspp_inter = positive(line, key, v)?,
            "aspp_growth" => m.aspp_growth = positive(line, key, v)?,
            "aspp_out" => m.aspp_out = positive(line, key, v)?,
            "low_level_channels" => m.low_level_channels = positive(line, key, v)?,
            "decoder_width" => m.decoder_width = positive(line, key, v)?,
            "input_size" => {
                let n = positive(line, key, v)?;
                if n % OUTPUT_STRIDE != 0 {
                    return parse_err(line, format!("`input_size` {n} is not a multiple of {OUTPUT_STRIDE}"));
                }
                m.input_size = n;
            }
            "batch_size" => t.batch_size = positive(line, key, v)?,
            "epochs" => t.epochs = number(line, key, v)?,
            "lr_min" => t.lr_min = rate(line, key, v)?,
            "lr_max" => t.lr_max = rate(line, key, v)?,
            "beta1" => t.adam.beta1 = unit_interval(line, key, v, true)?,
            "beta2" => t.adam.beta2 = unit_interval(line, key, v, true)?,
            "adam_eps" => {
                let e = rate(line, key, v)?;
                if e == 0.0 {
                    return parse_err(line, "`adam_eps` must be > 0");
                }
                t.adam.eps = e;
            }
            _ => unreachable!("keys checked in the first pass"),
        }
    }
    if c.train.lr_min > c.train.lr_max {
        let line = seen
            .iter()
            .filter(|(k, _)| *k == "lr_min" || *k == "lr_max")
            .map(|&(_, l)| l)
            .max()
            .unwrap_or(0);
        return parse_err(line, "`lr_min` exceeds `lr_max`");
    }
    if let Err(e) = c.model.validate() {
        return parse_err(rates_line, e.to_string());
    }
    Ok(c)
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Serializes every key; `parse_config(render_config(c)) == c`.
pub fn render_config(c: &Config) -> String {
    let m = &c.model;
    let t = &c.train;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("preset", c.preset.name().into());
    kv("num_classes", m.num_classes.to_string());
    kv("in_channels", m.in_channels.to_string());
    kv("backbone_widths", join(&m.backbone_widths));
    kv("attention", if m.attention { "on" } else { "off" }.into());
    kv("reduction", m.reduction.to_string());
    kv(
        "aspp_mode",
        match m.aspp_mode {
            AsppMode::Dense => "dense",
            AsppMode::Plain => "plain",
        }
        .into(),
    );
    kv("dense_rates", join(&m.dense_rates));
    kv("plain_rates", join(&m.plain_rates));
    kv("aspp_inter", m.aspp_inter.to_string());
    kv("aspp_growth", m.aspp_growth.to_string());
    kv("aspp_out", m.aspp_out.to_string());
    kv("low_level_channels", m.low_level_channels.to_string());
    kv("decoder_width", m.decoder_width.to_string());
    kv("input_size", m.input_size.to_string());
    kv("batch_size", t.batch_size.to_string());
    kv("epochs", t.epochs.to_string());
    kv("lr_min", format!("{:?}", t.lr_min));
    kv("lr_max", format!("{:?}", t.lr_max));
    kv("beta1", format!("{:?}", t.adam.beta1));
    kv("beta2", format!("{:?}", t.adam.beta2));
    kv("adam_eps", format!("{:?}", t.adam.eps));
    s
}

//! Named parameter lists with their configuration.
//!
//! ```text
//! count u32 LE
//! count × (name_len u32 LE | name UTF-8 | tensor record)
//! config_len u32 LE | config text UTF-8
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::binary::OffsetReader;
use super::config::{parse_config, render_config, Config};
use super::tensor_file::{read_tensor_from, write_tensor, AnyTensor};
use crate::error::{contract_err, Error, Result};
use crate::float::Float;
use crate::model::DcdModel;
use crate::nn::Module;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub tensors: Vec<(String, AnyTensor)>,
}

fn write_len(w: &mut dyn Write, n: usize) -> Result<()> {
    let n = u32::try_from(n).or_else(|_| contract_err(format!("length {n} exceeds u32")))?;
    w.write_all(&n.to_le_bytes())?;
    Ok(())
}

pub fn write_checkpoint<T: Float>(w: &mut dyn Write, model: &DcdModel<T>, config: &Config) -> Result<()> {
    if &config.model != model.config() {
        return Err(Error::ConfigMismatch(
            "checkpoint config differs from the model's architecture".into(),
        ));
    }
    let params = model.named_params();
    write_len(w, params.len())?;
    for (name, t) in &params {
        write_len(w, name.len())?;
        w.write_all(name.as_bytes())?;
        write_tensor(w, t)?;
    }
    let text = render_config(config);
    write_len(w, text.len())?;
    w.write_all(text.as_bytes())?;
    Ok(())
}

pub fn read_checkpoint(r: &mut dyn Read) -> Result<Checkpoint> {
    let mut r = OffsetReader::new(r);
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let at = r.offset();
        let name = String::from_utf8(r.bytes(len, "tensor name")?).or_else(|_| {
            Err(Error::Format {
                offset: at,
                message: "tensor name is not UTF-8".into(),
            })
        })?;
        tensors.push((name, read_tensor_from(&mut r)?));
    }
    let len = r.u32("config length")? as usize;
    let at = r.offset();
    let text = String::from_utf8(r.bytes(len, "config text")?).or_else(|_| {
        Err(Error::Format {
            offset: at,
            message: "config block is not UTF-8".into(),
        })
    })?;
    if !r.at_end()? {
        return r.error("trailing bytes after config block");
    }
    Ok(Checkpoint {
        config: parse_config(&text)?,
        tensors,
    })
}

impl Checkpoint {
    /// Rebuilds the model described by the stored config and loads every
    /// tensor into it. Names and shapes must match exactly.
    pub fn to_model<T: Float>(&self) -> Result<DcdModel<T>> {
        let mut model = DcdModel::new(&self.config.model, &Rng::new(0))?;
        let expected = model.named_params();
        if expected.len() != self.tensors.len() {
            return Err(Error::ConfigMismatch(format!(
                "config describes {} tensors, checkpoint holds {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for ((en, et), (n, t)) in expected.iter().zip(&self.tensors) {
            if en != n || et.shape() != t.shape() {
                return Err(Error::ConfigMismatch(format!(
                    "expected {en} {:?}, checkpoint has {n} {:?}",
                    et.shape(),
                    t.shape()
                )));
            }
        }
        let mut i = 0;
        model.visit_mut("", &mut |_, p| {
            *p = self.tensors[i].1.to();
            i += 1;
        });
        Ok(model)
    }
}

pub fn save_checkpoint<T: Float>(path: impl AsRef<Path>, model: &DcdModel<T>, config: &Config) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model, config)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> Config {
        let mut c = Config::default();
        c.model = ModelConfig {
            backbone_widths: [4, 8, 8, 8],
            reduction: 4,
            aspp_inter: 4,
            aspp_growth: 4,
            aspp_out: 8,
            low_level_channels: 4,
            decoder_width: 8,
            input_size: 32,
            ..ModelConfig::default()
        };
        c
    }

    #[test]
    fn round_trip_restores_parameters() {
        let cfg = tiny();
        let model = DcdModel::<f32>::new(&cfg.model, &Rng::new(11)).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &model, &cfg).unwrap();
        let ck = read_checkpoint(&mut bytes.as_slice()).unwrap();
        assert_eq!(ck.config, cfg);
        let back: DcdModel<f32> = ck.to_model().unwrap();
        assert_eq!(back.named_params(), model.named_params());
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back, &cfg).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn architecture_mismatch_detected() {
        let cfg = tiny();
        let model = DcdModel::<f32>::new(&cfg.model, &Rng::new(0)).unwrap();
        let mut other = cfg.clone();
        other.model.attention = false;
        let mut bytes = Vec::new();
        assert!(matches!(
            write_checkpoint(&mut bytes, &model, &other),
            Err(Error::ConfigMismatch(_))
        ));
        let mut ck = Checkpoint {
            config: cfg.clone(),
            tensors: model.named_params().into_iter().map(|(n, t)| (n, t.into())).collect(),
        };
        ck.config.model.decoder_width = 16;
        assert!(matches!(ck.to_model::<f32>(), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn truncated_checkpoint_is_format_error() {
        let cfg = tiny();
        let model = DcdModel::<f32>::new(&cfg.model, &Rng::new(0)).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &model, &cfg).unwrap();
        bytes.truncate(bytes.len() / 2);
        assert!(matches!(read_checkpoint(&mut bytes.as_slice()), Err(Error::Format { .. })));
    }
}

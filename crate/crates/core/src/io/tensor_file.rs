//! Single-tensor binary records.
//!
//! ```text
//! "DCDT" | version u8 = 1 | dtype u8 (0 f32, 1 f64) | rank u8 | rank × u32 LE extents | payload LE
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::binary::OffsetReader;
use crate::error::{contract_err, Result};
use crate::float::{DType, Float};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DCDT";
pub const VERSION: u8 = 1;

/// A tensor of either supported element type.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn to<T: Float>(&self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

impl From<Tensor<f32>> for AnyTensor {
    fn from(t: Tensor<f32>) -> Self {
        AnyTensor::F32(t)
    }
}

impl From<Tensor<f64>> for AnyTensor {
    fn from(t: Tensor<f64>) -> Self {
        AnyTensor::F64(t)
    }
}

pub fn write_tensor<T: Float>(w: &mut dyn Write, t: &Tensor<T>) -> Result<()> {
    if t.rank() > u8::MAX as usize {
        return contract_err(format!("rank {} does not fit the tensor header", t.rank()));
    }
    let mut header = Vec::with_capacity(7 + 4 * t.rank());
    header.extend_from_slice(MAGIC);
    header.push(VERSION);
    header.push(T::DTYPE.code());
    header.push(t.rank() as u8);
    for &d in t.shape() {
        let d = u32::try_from(d).or_else(|_| contract_err(format!("extent {d} exceeds u32")))?;
        header.extend_from_slice(&d.to_le_bytes());
    }
    w.write_all(&header)?;
    let mut payload = Vec::with_capacity(t.numel() * T::DTYPE.width());
    for &v in t.data() {
        v.to_le_bytes_vec(&mut payload);
    }
    w.write_all(&payload)?;
    Ok(())
}

pub(crate) fn read_tensor_from<R: Read>(r: &mut OffsetReader<R>) -> Result<AnyTensor> {
    let start = r.offset();
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic, "tensor magic")?;
    if &magic != MAGIC {
        return Err(crate::Error::Format {
            offset: start,
            message: format!(
                "expected magic `DCDT`, found `{}`",
                String::from_utf8_lossy(&magic)
            ),
        });
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return r.error(format!("unsupported tensor format version {version}"));
    }
    let code = r.u8("dtype")?;
    let Some(dtype) = DType::from_code(code) else {
        return r.error(format!("unknown dtype code {code}"));
    };
    let rank = r.u8("rank")? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32("extent")? as usize);
    }
    let Some(numel) = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)) else {
        return r.error("tensor extents overflow");
    };
    let Some(len) = numel.checked_mul(dtype.width()) else {
        return r.error("tensor payload size overflows");
    };
    let bytes = r.bytes(len, "tensor payload")?;
    fn decode<T: Float>(shape: &[usize], bytes: &[u8]) -> Result<Tensor<T>> {
        let w = T::DTYPE.width();
        Tensor::new(shape, bytes.chunks_exact(w).map(T::from_le_slice).collect())
    }
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(decode(&shape, &bytes)?),
        DType::F64 => AnyTensor::F64(decode(&shape, &bytes)?),
    })
}

/// Reads exactly one record; trailing bytes are an error.
pub fn read_tensor(r: &mut dyn Read) -> Result<AnyTensor> {
    let mut r = OffsetReader::new(r);
    let t = read_tensor_from(&mut r)?;
    if !r.at_end()? {
        return r.error("trailing bytes after tensor record");
    }
    Ok(t)
}

pub fn save_tensor<T: Float>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    fn bytes_of<T: Float>(t: &Tensor<T>) -> Vec<u8> {
        let mut v = Vec::new();
        write_tensor(&mut v, t).unwrap();
        v
    }

    #[test]
    fn scalar_layout_and_round_trip() {
        let t = Tensor::scalar(1.5f32);
        let b = bytes_of(&t);
        assert_eq!(&b[..7], b"DCDT\x01\x00\x00");
        assert_eq!(&b[7..], &1.5f32.to_le_bytes());
        assert_eq!(read_tensor(&mut b.as_slice()).unwrap(), AnyTensor::F32(t));
    }

    #[test]
    fn extents_are_little_endian() {
        let t = Tensor::<f64>::zeros(&[2, 258]);
        let b = bytes_of(&t);
        assert_eq!(&b[4..7], &[1, 1, 2]);
        assert_eq!(&b[7..15], &[2, 0, 0, 0, 2, 1, 0, 0]);
        assert_eq!(b.len(), 15 + 2 * 258 * 8);
    }

    #[test]
    fn bad_magic_names_expected() {
        let mut b = bytes_of(&Tensor::scalar(1.0f32));
        b[..4].copy_from_slice(b"XXXX");
        match read_tensor(&mut b.as_slice()) {
            Err(Error::Format { offset: 0, message }) => assert!(message.contains("DCDT")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_version_dtype_and_truncation() {
        let good = bytes_of(&Tensor::<f32>::ones(&[3]));
        let mut b = good.clone();
        b[4] = 2;
        assert!(matches!(read_tensor(&mut b.as_slice()), Err(Error::Format { offset: 5, .. })));
        let mut b = good.clone();
        b[5] = 9;
        assert!(matches!(read_tensor(&mut b.as_slice()), Err(Error::Format { offset: 6, .. })));
        let b = &good[..good.len() - 1];
        assert!(matches!(read_tensor(&mut &b[..]), Err(Error::Format { .. })));
        let mut b = good.clone();
        b.push(0);
        assert!(matches!(read_tensor(&mut b.as_slice()), Err(Error::Format { .. })));
    }

    #[test]
    fn special_values_are_bit_exact() {
        let vals = [f32::NAN, -0.0, f32::INFINITY, f32::MIN_POSITIVE / 2.0];
        let t = Tensor::new(&[4], vals.to_vec()).unwrap();
        let AnyTensor::F32(back) = read_tensor(&mut bytes_of(&t).as_slice()).unwrap() else {
            panic!()
        };
        for (a, b) in vals.iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

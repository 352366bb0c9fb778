//! Binary portable graymap (P5) and pixmap (P6) files, 8-bit only.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::binary::OffsetReader;
use super::classes::ClassTable;
use crate::error::{contract_err, dim_err, Error, Result};
use crate::segmask::{SegMask, MAX_CLASS};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnmKind {
    Gray,
    Rgb,
}

impl PnmKind {
    fn magic(self) -> &'static [u8; 2] {
        match self {
            PnmKind::Gray => b"P5",
            PnmKind::Rgb => b"P6",
        }
    }

    fn channels(self) -> usize {
        match self {
            PnmKind::Gray => 1,
            PnmKind::Rgb => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub kind: PnmKind,
    pub width: usize,
    pub height: usize,
    pub maxval: u8,
    /// Row-major samples, interleaved for RGB.
    pub data: Vec<u8>,
}

pub fn write_pnm(w: &mut dyn Write, img: &Pnm) -> Result<()> {
    if img.data.len() != img.width * img.height * img.kind.channels() {
        return dim_err("pixel buffer does not match image extent");
    }
    if img.maxval == 0 {
        return contract_err("maxval must be ≥ 1");
    }
    w.write_all(img.kind.magic())?;
    write!(w, "\n{} {}\n{}\n", img.width, img.height, img.maxval)?;
    w.write_all(&img.data)?;
    Ok(())
}

fn header_token<R: Read>(r: &mut OffsetReader<R>, pending: &mut Option<u8>) -> Result<usize> {
    let next = |r: &mut OffsetReader<R>, pending: &mut Option<u8>| match pending.take() {
        Some(b) => Ok(b),
        None => r.u8("header"),
    };
    let mut b = next(r, pending)?;
    loop {
        if b == b'#' {
            while b != b'\n' {
                b = next(r, pending)?;
            }
        } else if !b.is_ascii_whitespace() {
            break;
        }
        b = next(r, pending)?;
    }
    let mut value: usize = 0;
    if !b.is_ascii_digit() {
        return r.error(format!("expected a number in header, found byte {b:#04x}"));
    }
    while b.is_ascii_digit() {
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add((b - b'0') as usize))
            .map_or_else(|| r.error("header number too large"), Ok)?;
        b = next(r, pending)?;
    }
    // The terminating byte is kept for the caller; after maxval it must be
    // exactly one whitespace byte.
    *pending = Some(b);
    Ok(value)
}

pub fn read_pnm(r: &mut dyn Read) -> Result<Pnm> {
    let mut r = OffsetReader::new(r);
    let mut magic = [0u8; 2];
    r.read_exact(&mut magic, "magic")?;
    let kind = match &magic {
        b"P5" => PnmKind::Gray,
        b"P6" => PnmKind::Rgb,
        _ => {
            return Err(Error::Format {
                offset: 0,
                message: format!(
                    "expected `P5` or `P6`, found `{}`",
                    String::from_utf8_lossy(&magic)
                ),
            })
        }
    };
    let mut pending = None;
    let width = header_token(&mut r, &mut pending)?;
    let height = header_token(&mut r, &mut pending)?;
    let maxval = header_token(&mut r, &mut pending)?;
    if !pending.is_some_and(|b| b.is_ascii_whitespace()) {
        return r.error("expected whitespace after maxval");
    }
    if maxval == 0 || maxval > 255 {
        return r.error(format!("only 8-bit images are supported, maxval {maxval}"));
    }
    let Some(len) = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(kind.channels()))
    else {
        return r.error("image extent overflows");
    };
    let data = r.bytes(len, "pixel data")?;
    if let Some(&v) = data.iter().find(|&&v| v as usize > maxval) {
        return r.error(format!("sample {v} exceeds maxval {maxval}"));
    }
    Ok(Pnm {
        kind,
        width,
        height,
        maxval: maxval as u8,
        data,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn save_pnm(path: impl AsRef<Path>, img: &Pnm) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_pnm(&mut w, img)?;
    w.flush()?;
    Ok(())
}

pub fn load_pnm(path: impl AsRef<Path>) -> Result<Pnm> {
    read_pnm(&mut BufReader::new(File::open(path)?))
}

/// Class indices stored directly as gray levels, maxval 255.
pub fn write_mask(w: &mut dyn Write, m: &SegMask) -> Result<()> {
    write_pnm(
        w,
        &Pnm {
            kind: PnmKind::Gray,
            width: m.width(),
            height: m.height(),
            maxval: 255,
            data: m.data().to_vec(),
        },
    )
}

pub fn read_mask(r: &mut dyn Read) -> Result<SegMask> {
    let img = read_pnm(r)?;
    if img.kind != PnmKind::Gray {
        return contract_err("masks must be P5 graymaps");
    }
    if let Some(&v) = img.data.iter().find(|&&v| v > MAX_CLASS) {
        return contract_err(format!("mask value {v} is not a class index (0..={MAX_CLASS})"));
    }
    SegMask::new(img.height, img.width, img.data)
}

pub fn save_mask(path: impl AsRef<Path>, m: &SegMask) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_mask(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<SegMask> {
    read_mask(&mut BufReader::new(File::open(path)?))
}

/// A P5 image as a 1×H×W tensor scaled to [0, 1].
pub fn load_gray_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let img = load_pnm(path)?;
    if img.kind != PnmKind::Gray {
        return contract_err("input images must be P5 graymaps");
    }
    let scale = 1.0 / img.maxval as f32;
    Tensor::new(
        &[1, img.height, img.width],
        img.data.iter().map(|&v| v as f32 * scale).collect(),
    )
}

fn to_gray_bytes(image: &Tensor<f32>) -> Result<(usize, usize, Vec<u8>)> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 1 {
        return dim_err(format!("expected a 1×H×W image, got {s:?}"));
    }
    let px = image
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Ok((s[1], s[2], px))
}

/// Writes a 1×H×W image in [0, 1] as an 8-bit P5 file.
pub fn save_gray_image(path: impl AsRef<Path>, image: &Tensor<f32>) -> Result<()> {
    let (height, width, data) = to_gray_bytes(image)?;
    save_pnm(
        path,
        &Pnm {
            kind: PnmKind::Gray,
            width,
            height,
            maxval: 255,
            data,
        },
    )
}

/// Blends class colours over a grayscale image: `(1 − α)·gray + α·colour`
/// for structure pixels; background pixels keep the plain image.
pub fn render_overlay(image: &Tensor<f32>, mask: &SegMask, table: &ClassTable, alpha: f64) -> Result<Pnm> {
    if !(0.0..=1.0).contains(&alpha) {
        return contract_err(format!("alpha must be in [0, 1], got {alpha}"));
    }
    let (height, width, gray) = to_gray_bytes(image)?;
    if height != mask.height() || width != mask.width() {
        return dim_err(format!(
            "image {height}×{width} vs mask {}×{}",
            mask.height(),
            mask.width()
        ));
    }
    let mut data = Vec::with_capacity(gray.len() * 3);
    for (&g, &c) in gray.iter().zip(mask.data()) {
        if c == 0 {
            data.extend_from_slice(&[g, g, g]);
        } else {
            for ch in table.color(c) {
                let v = (1.0 - alpha) * g as f64 + alpha * ch as f64;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(Pnm {
        kind: PnmKind::Rgb,
        width,
        height,
        maxval: 255,
        data,
    })
}

pub fn write_overlay(
    path: impl AsRef<Path>,
    image: &Tensor<f32>,
    mask: &SegMask,
    table: &ClassTable,
    alpha: f64,
) -> Result<()> {
    save_pnm(path, &render_overlay(image, mask, table, alpha)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_bytes(m: &SegMask) -> Vec<u8> {
        let mut v = Vec::new();
        write_mask(&mut v, m).unwrap();
        v
    }

    #[test]
    fn mask_round_trip_keeps_histogram() {
        let m = SegMask::new(2, 7, (0..14).collect()).unwrap();
        let b = mask_bytes(&m);
        assert!(b.starts_with(b"P5\n7 2\n255\n"));
        let back = read_mask(&mut b.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.histogram(), [1; 14]);
        let z = SegMask::filled(4, 4, 0).unwrap();
        assert_eq!(read_mask(&mut mask_bytes(&z).as_slice()).unwrap(), z);
    }

    #[test]
    fn out_of_range_mask_value_rejected() {
        let bytes = b"P5 2 1 255\n\x00\xc8".to_vec();
        match read_mask(&mut bytes.as_slice()) {
            Err(Error::Contract(msg)) => assert!(msg.contains("200")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_comments_and_bad_magic() {
        let bytes = b"P5\n# made by hand\n2 # width\n1\n255\n\x01\x02".to_vec();
        let img = read_pnm(&mut bytes.as_slice()).unwrap();
        assert_eq!((img.width, img.height, img.data.clone()), (2, 1, vec![1, 2]));
        assert!(matches!(
            read_pnm(&mut &b"P2 1 1 255\n\x00"[..]),
            Err(Error::Format { offset: 0, .. })
        ));
        assert!(read_pnm(&mut &b"P5 2 2 255\n\x00"[..]).is_err());
        assert!(read_pnm(&mut &b"P5 1 1 65535\n\x00\x00"[..]).is_err());
    }

    #[test]
    fn overlay_blend_rules() {
        let table = ClassTable::standard();
        let gray = Tensor::from_fn(&[1, 2, 2], |i| i as f32 / 3.0);
        let m = SegMask::filled(2, 2, 9).unwrap();
        let o = render_overlay(&gray, &m, &table, 0.0).unwrap();
        let g: Vec<u8> = gray.data().iter().map(|&v| (v * 255.0).round() as u8).collect();
        assert_eq!(o.data, g.iter().flat_map(|&v| [v, v, v]).collect::<Vec<_>>());
        let o = render_overlay(&gray, &m, &table, 1.0).unwrap();
        assert_eq!(o.data, [255, 0, 0].repeat(4));

        let black = Tensor::zeros(&[1, 1, 1]);
        let o = render_overlay(&black, &SegMask::filled(1, 1, 2).unwrap(), &table, 0.5).unwrap();
        assert_eq!(o.data, vec![0, 64, 0]);
        assert!(render_overlay(&black, &SegMask::filled(1, 2, 2).unwrap(), &table, 0.5).is_err());
    }

    #[test]
    fn background_stays_gray() {
        let img = Tensor::full(&[1, 1, 2], 0.5f32);
        let m = SegMask::new(1, 2, vec![0, 1]).unwrap();
        let o = render_overlay(&img, &m, &ClassTable::standard(), 1.0).unwrap();
        assert_eq!(o.data, vec![128, 128, 128, 128, 0, 0]);
    }
}

//! Per-pixel class-index maps.

use crate::error::{contract_err, dim_err, Result};

/// Class 0 is background; structures are 1..=13.
pub const MAX_CLASS: u8 = 13;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl SegMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return dim_err(format!(
                "mask of {height}×{width} needs {} values, got {}",
                height * width,
                data.len()
            ));
        }
        if let Some(&v) = data.iter().find(|&&v| v > MAX_CLASS) {
            return contract_err(format!("mask value {v} exceeds class index {MAX_CLASS}"));
        }
        Ok(SegMask { height, width, data })
    }

    pub fn filled(height: usize, width: usize, class: u8) -> Result<Self> {
        Self::new(height, width, vec![class; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Pixel counts per class index 0..=13.
    pub fn histogram(&self) -> [usize; MAX_CLASS as usize + 1] {
        let mut h = [0; MAX_CLASS as usize + 1];
        for &v in &self.data {
            h[v as usize] += 1;
        }
        h
    }

    pub(crate) fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self.data.iter().find(|&&v| v as usize >= num_classes) {
            Some(v) => contract_err(format!("target class {v} out of range for {num_classes} classes")),
            None => Ok(()),
        }
    }
}

//! Dataset-level IoU accumulation.

use std::fmt::Write;

use crate::error::{dim_err, Result};
use crate::io::ClassTable;
use crate::segmask::SegMask;

/// Per-class counts of `|P ∩ G|`, `|P|` and `|G|` over every pixel seen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionAccumulator {
    intersection: Vec<u64>,
    predicted: Vec<u64>,
    actual: Vec<u64>,
}

impl ConfusionAccumulator {
    pub fn new(num_classes: usize) -> Self {
        ConfusionAccumulator {
            intersection: vec![0; num_classes],
            predicted: vec![0; num_classes],
            actual: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.actual.len()
    }

    pub fn add(&mut self, pred: &SegMask, truth: &SegMask) -> Result<()> {
        if pred.height() != truth.height() || pred.width() != truth.width() {
            return dim_err(format!(
                "prediction {}×{} vs ground truth {}×{}",
                pred.height(),
                pred.width(),
                truth.height(),
                truth.width()
            ));
        }
        let c = self.num_classes();
        pred.check_classes(c)?;
        truth.check_classes(c)?;
        for (&p, &g) in pred.data().iter().zip(truth.data()) {
            self.predicted[p as usize] += 1;
            self.actual[g as usize] += 1;
            if p == g {
                self.intersection[p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.num_classes() != self.num_classes() {
            return dim_err("cannot merge accumulators with different class counts");
        }
        for c in 0..self.num_classes() {
            self.intersection[c] += other.intersection[c];
            self.predicted[c] += other.predicted[c];
            self.actual[c] += other.actual[c];
        }
        Ok(())
    }

    pub fn intersection(&self, c: usize) -> u64 {
        self.intersection[c]
    }

    pub fn predicted(&self, c: usize) -> u64 {
        self.predicted[c]
    }

    pub fn actual(&self, c: usize) -> u64 {
        self.actual[c]
    }

    pub fn union(&self, c: usize) -> u64 {
        self.predicted[c] + self.actual[c] - self.intersection[c]
    }

    /// `None` when the class never appears in either prediction or truth.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let u = self.union(c);
        (u > 0).then(|| self.intersection[c] as f64 / u as f64)
    }

    /// Hard Dice coefficient `2|P∩G| / (|P|+|G|)`.
    pub fn dice(&self, c: usize) -> Option<f64> {
        let d = self.predicted[c] + self.actual[c];
        (d > 0).then(|| 2.0 * self.intersection[c] as f64 / d as f64)
    }

    /// Mean IoU over foreground classes with a non-empty union.
    pub fn miou(&self) -> Option<f64> {
        let ious: Vec<f64> = (1..self.num_classes()).filter_map(|c| self.iou(c)).collect();
        (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
    }

    /// Plain-text table: one row per structure, then mIoU.
    pub fn report(&self, table: &ClassTable) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<6} {:<28} {:>7}", "class", "structure", "IoU");
        for entry in table.entries().iter().filter(|e| (e.index as usize) < self.num_classes()) {
            let iou = match self.iou(entry.index as usize) {
                Some(v) => format!("{v:.3}"),
                None => "n/a".to_string(),
            };
            let _ = writeln!(out, "{:<6} {:<28} {:>7}", entry.abbreviation, entry.name, iou);
        }
        let miou = self.miou().map_or("n/a".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(out, "{:<6} {:<28} {:>7}", "mIoU", "", miou);
        out
    }
}

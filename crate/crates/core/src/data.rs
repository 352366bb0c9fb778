//! Seeded synthetic scenes: overlapping ellipses on a dark background with
//! multiplicative speckle.

use std::f64::consts::PI;

use crate::error::{contract_err, Result};
use crate::rng::Rng;
use crate::segmask::{SegMask, MAX_CLASS};
use crate::tensor::Tensor;

pub const MIN_SCENE_SIZE: usize = 32;
pub const SPECKLE_SIGMA: f64 = 0.2;

/// Mean intensity of each class before speckle; index 0 is background.
/// The first few foreground classes are spread out so that small scenes are
/// separable by intensity alone.
pub const CLASS_INTENSITY: [f64; MAX_CLASS as usize + 1] = [
    0.10, 0.90, 0.50, 0.70, 0.30, 0.80, 0.40, 0.60, 0.20, 0.95, 0.55, 0.75, 0.35, 0.65,
];

/// Fraction of its own area each ellipse must keep after occlusion.
const MIN_VISIBLE_FRACTION: f64 = 0.5;
const MIN_SEMI_AXIS: f64 = 1.5;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    /// 1×H×W, values in [0, 1].
    pub image: Tensor<f32>,
    pub mask: SegMask,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Draws a scene from `Rng::new(seed)`.
pub fn generate_scene(seed: u64, size: usize, k: usize) -> Result<SyntheticScene> {
    if size < MIN_SCENE_SIZE {
        return contract_err(format!("scene size must be ≥ {MIN_SCENE_SIZE}, got {size}"));
    }
    if k > MAX_CLASS as usize {
        return contract_err(format!("at most {MAX_CLASS} structures, got {k}"));
    }
    let mut rng = Rng::new(seed);
    let s = size as f64;
    let mut attempt = 0usize;
    let labels = loop {
        // Shrink the ellipses gradually if crowded scenes keep occluding.
        let shrink = 1.0 / (1.0 + attempt as f64 / 20.0);
        attempt += 1;
        let mut order: Vec<u8> = (1..=k as u8).collect();
        rng.shuffle(&mut order);
        let shapes: Vec<Ellipse> = order
            .iter()
            .map(|_| {
                let theta = rng.uniform_range(0.0, PI);
                Ellipse {
                    cx: rng.uniform_range(0.2 * s, 0.8 * s),
                    cy: rng.uniform_range(0.2 * s, 0.8 * s),
                    a: (rng.uniform_range(s / 6.0, s / 3.0) * shrink).max(MIN_SEMI_AXIS),
                    b: (rng.uniform_range(s / 6.0, s / 3.0) * shrink).max(MIN_SEMI_AXIS),
                    cos: theta.cos(),
                    sin: theta.sin(),
                }
            })
            .collect();
        let mut labels = vec![0u8; size * size];
        let mut own_area = vec![0usize; k + 1];
        for (e, &label) in shapes.iter().zip(&order) {
            for y in 0..size {
                for x in 0..size {
                    if e.contains(x as f64 + 0.5, y as f64 + 0.5) {
                        labels[y * size + x] = label;
                        own_area[label as usize] += 1;
                    }
                }
            }
        }
        let mut visible = vec![0usize; k + 1];
        for &l in &labels {
            visible[l as usize] += 1;
        }
        let ok = (1..=k).all(|c| {
            visible[c] >= 1 && visible[c] as f64 >= MIN_VISIBLE_FRACTION * own_area[c] as f64
        });
        if ok {
            break labels;
        }
    };
    let image = Tensor::from_fn(&[1, size, size], |i| {
        let base = CLASS_INTENSITY[labels[i] as usize];
        (base * (1.0 + SPECKLE_SIGMA * rng.normal())).clamp(0.0, 1.0) as f32
    });
    Ok(SyntheticScene {
        image,
        mask: SegMask::new(size, size, labels)?,
        seed,
    })
}

/// `count` scenes whose seeds are drawn from `Rng::new(seed)`.
pub fn generate_dataset(seed: u64, count: usize, size: usize, k: usize) -> Result<Vec<SyntheticScene>> {
    let mut rng = Rng::new(seed);
    (0..count).map(|_| generate_scene(rng.next_u64(), size, k)).collect()
}

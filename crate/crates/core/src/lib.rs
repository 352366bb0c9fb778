//! Dense-ASPP + CBAM encoder–decoder segmentation, built on a small
//! from-scratch tensor and reverse-mode differentiation engine.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`autograd`]: dense arrays and the operation tape.
//! - [`nn`]: dilated convolution, pooling, upsampling, dense layers.
//! - [`cbam`], [`aspp`]: channel/spatial attention and the atrous pyramids.
//! - [`model`]: the full encoder–decoder network and its configuration.
//! - [`loss`], [`metrics`]: cross-entropy + soft Dice objective, IoU.
//! - [`optim`], [`data`], [`train`]: Adam, cosine schedule, synthetic scenes
//!   and the training loop.
//! - [`io`]: tensor/checkpoint files, masks, overlays, config text.

pub mod aspp;
pub mod autograd;
pub mod cbam;
pub mod data;
pub mod error;
pub mod float;
pub mod gradcheck;
pub mod gradsuite;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod segmask;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use float::{DType, Float};
pub use rng::Rng;
pub use segmask::SegMask;
pub use tensor::Tensor;

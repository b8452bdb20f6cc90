//! Semantic-relation preserving knowledge distillation for image-to-image
//! translation GANs, at desk scale.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense `f64` tensors with reverse-mode differentiation.
//! * [`models`]: ResNet/UNet generators, PatchGAN discriminators,
//!   parameter and FLOP accounting, checkpoints.
//! * [`losses`]: adversarial, cycle, vanilla KD and semantic-relation losses.
//! * [`train`]: Adam, image history pool, teacher and student training loops.
//! * [`data`]: synthetic datasets and PPM/PGM codecs.
//! * [`metrics`]: proxy Fréchet distance, segmentation scores and
//!   class-grouped similarity analysis.

pub mod data;
pub mod error;
pub mod kv;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

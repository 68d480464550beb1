//! Core library for lung-field segmentation, segmentation-gated tuberculosis
//! classification, and Score-CAM reliability auditing on chest radiographs.
//!
//! Everything runs on the CPU on a small reverse-mode autodiff engine
//! ([`tensor`]); no external ML runtime is involved. The pieces:
//!
//! - [`tensor`]: tensors, tape, differentiable ops, SGD with momentum
//! - [`nn`]: U-Net variants, small classifier families, the training loop
//! - [`image`]: PGM/PPM codecs, resizing, normalization, datasets, checkpoints
//! - [`augment`]: rotation/translation augmentation and minority balancing
//! - [`metrics`]: confusion-matrix metrics, ROC/AUC, cross-validation folds
//! - [`cam`]: Score-CAM heat maps and mask-localization scoring
//! - [`synth`]: seeded synthetic chest-image generator with ground-truth masks

pub mod augment;
pub mod cam;
pub mod error;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};

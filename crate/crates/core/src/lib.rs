//! Desk-scale chest X-ray grading.
//!
//! The crate is a small, dependency-light deep-learning stack built around
//! a residual-inception classifier with partial attention:
//!
//! - [`tensor`] and [`autograd`]: NHWC tensors and a reverse-mode tape, generic
//!   over `f32`/`f64` so that [`gradcheck`] can verify every op in `f64`.
//! - [`nn`]: inception blocks, partial attention and the declarative network builder.
//! - [`train`]: weighted sigmoid cross-entropy, Nesterov SGD, schedules, checkpoints.
//! - [`data`]: manifests, PPM/PGM codecs, augmentation and balanced batching.
//! - [`metrics`]: confusion counts, ROC/AUC, operating points and report tables.
//! - [`explain`]: occlusion heatmaps.
//! - [`commands`]: the operations behind the `xgrade` binary.

pub mod autograd;
pub mod commands;
pub mod data;
pub mod error;
pub mod explain;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

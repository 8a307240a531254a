//! Temporal semantic segmentation of synthetic bridge video.
//!
//! A residual FCN predicts per-pixel class logits for each frame; a recurrent
//! head (convolutional simple RNN or ConvLSTM) rewrites the lowest-resolution
//! logits using memory of earlier frames before the skip merge. The crate
//! also contains the procedural bridge renderer that produces training video,
//! the two-stage training loop and the evaluation/report code.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fcn;
pub mod gradcheck;
pub mod labels;
pub mod model;
pub mod ops;
pub mod params;
pub mod recurrent;
pub mod synthworld;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use labels::{LabelMap, IGNORE_LABEL};
pub use tensor::{BatchNormParams, Dims, KernelBank, Tensor4};

//! Real-time fine-grained action recognition.
//!
//! Frames are turned into three inputs (resized RGB, coarse-to-fine
//! Horn–Schunck optical flow, and a rendered HOG image), each fed through an
//! identical DenseNet-BC stream. The three feature maps are channel-interleaved,
//! pooled, and classified by a single fully-connected softmax head. At run time
//! per-frame predictions land in a circular frame buffer that is polled for a
//! thresholded majority vote.

pub mod bench;
pub mod dataset;
pub mod error;
pub mod media;
pub mod network;
pub mod preprocess;
pub mod rng;
pub mod runtime;
pub mod tensor;

pub use error::{Error, Result};

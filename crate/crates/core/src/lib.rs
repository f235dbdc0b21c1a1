//! Dual-branch polyp segmentation: a pyramid-transformer branch and a
//! full-resolution convolutional branch fused by a prediction head, built on
//! a small reverse-mode autodiff engine.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

//! Differentiable primitives, implemented as methods on [`Tape`](super::Tape).

mod conv;
mod elementwise;
mod linalg;
mod loss;
mod norm;
mod resample;
mod shape;
mod softmax;

pub use conv::Conv2dOptions;
pub use resample::{resize_chw, AxisWeights, ResampleMode};

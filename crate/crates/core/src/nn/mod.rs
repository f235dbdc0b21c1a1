//! Reusable network blocks: residual block, overlapping patch embedding,
//! linear spatial-reduction attention, Mix-FFN, local emphasis and stepwise
//! feature aggregation.

mod attention;
mod decoder;
mod embed;
mod layers;
mod residual;

pub use attention::{AttentionConfig, LinearSra, MixFfn, TransformerBlock};
pub use decoder::{LocalEmphasis, StepwiseAggregate, PLD_WIDTH};
pub use embed::OverlapPatchEmbed;
pub use layers::{group_count, to_spatial, to_tokens, Conv2d, Ctx, Linear, Norm, ParamInit};
pub use residual::ResidualBlock;

use crate::tensor::{Float, Var};

/// Four encoder levels at strides 4, 8, 16 and 32.
#[derive(Clone)]
pub struct FeaturePyramid<T> {
    pub levels: Vec<Var<T>>,
}

impl<T: Float> FeaturePyramid<T> {
    /// Checks that each level halves the spatial extent of the previous one.
    pub fn is_well_formed(&self) -> bool {
        self.levels.len() == 4
            && self.levels.windows(2).all(|w| {
                let (a, b) = (w[0].shape(), w[1].shape());
                a[0] == b[0] && a[2] == 2 * b[2] && a[3] == 2 * b[3]
            })
    }
}

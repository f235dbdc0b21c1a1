use super::layers::{Conv2d, Ctx, ParamInit};
use super::residual::ResidualBlock;
use crate::error::{Error, Result};
use crate::tensor::{Float, ResampleMode, Var};

/// Channel width of every local-emphasis and aggregation layer.
pub const PLD_WIDTH: usize = 64;

/// Local emphasis for one pyramid level: 1×1 projection to 64 channels, a
/// residual block, then bilinear resampling to quarter input resolution.
#[derive(Debug, Clone)]
pub struct LocalEmphasis {
    pub proj: Conv2d,
    pub rb: ResidualBlock,
}

impl LocalEmphasis {
    pub fn new(prefix: &str, cin: usize) -> Self {
        LocalEmphasis {
            proj: Conv2d::pointwise(format!("{prefix}.proj"), cin, PLD_WIDTH),
            rb: ResidualBlock::new(&format!("{prefix}.rb"), PLD_WIDTH, PLD_WIDTH),
        }
    }

    pub fn init<T: Float>(&self, pi: &mut ParamInit<T>) {
        self.proj.init(pi);
        self.rb.init(pi);
    }

    pub fn forward<T: Float>(&self, cx: &Ctx<T>, level: &Var<T>, target_hw: (usize, usize)) -> Result<Var<T>> {
        let y = self.rb.forward(cx, &self.proj.forward(cx, level)?)?;
        cx.tape
            .interpolate2d(&y, target_hw.0, target_hw.1, ResampleMode::Bilinear, false)
    }
}

/// Deep-to-shallow fusion: starting from the deepest map, repeatedly
/// concatenate the next shallower map (current first) and fuse 128 → 64
/// channels with a residual block.
#[derive(Debug, Clone)]
pub struct StepwiseAggregate {
    pub steps: Vec<ResidualBlock>,
}

impl StepwiseAggregate {
    pub fn new(prefix: &str) -> Self {
        StepwiseAggregate {
            steps: (0..3)
                .map(|i| ResidualBlock::new(&format!("{prefix}.{i}"), 2 * PLD_WIDTH, PLD_WIDTH))
                .collect(),
        }
    }

    pub fn init<T: Float>(&self, pi: &mut ParamInit<T>) {
        for rb in &self.steps {
            rb.init(pi);
        }
    }

    /// `les` are ordered shallow to deep.
    pub fn forward<T: Float>(&self, cx: &Ctx<T>, les: &[Var<T>]) -> Result<Var<T>> {
        if les.len() != 4 || les.iter().any(|l| l.shape() != les[0].shape()) {
            let shapes: Vec<_> = les.iter().map(|l| l.shape().to_vec()).collect();
            return Err(Error::shape("stepwise_aggregate", format!("need four equal shapes, got {shapes:?}")));
        }
        let mut f = les[3].clone();
        for (rb, shallow) in self.steps.iter().zip(les[..3].iter().rev()) {
            let cat = cx.tape.concat(&[&f, shallow], 1)?;
            f = rb.forward(cx, &cat)?;
        }
        Ok(f)
    }
}

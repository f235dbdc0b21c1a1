use super::config::ModelConfig;
use super::encoder::PyramidEncoder;
use crate::error::Result;
use crate::nn::{Conv2d, Ctx, Norm, ParamInit, PLD_WIDTH};
use crate::tensor::{Float, ResampleMode, Var};

/// 3×3 conv, group norm, SiLU.
#[derive(Debug, Clone)]
struct ConvUnit {
    conv: Conv2d,
    norm: Norm,
}

impl ConvUnit {
    fn new(prefix: &str, cin: usize, cout: usize) -> Self {
        ConvUnit {
            conv: Conv2d::same(format!("{prefix}.conv"), cin, cout, 3),
            norm: Norm::new(format!("{prefix}.gn"), cout),
        }
    }

    fn init<T: Float>(&self, pi: &mut ParamInit<T>) {
        self.conv.init(pi);
        self.norm.init(pi);
    }

    fn forward<T: Float>(&self, cx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let h = self.norm.group(cx, &self.conv.forward(cx, x)?)?;
        Ok(cx.tape.silu(&h))
    }
}

/// Pyramid encoder plus the plain progressive decoder: single conv units
/// where the improved decoder uses residual blocks, and a 1×1 prediction at
/// quarter resolution.
#[derive(Debug, Clone)]
pub struct SsFormerI {
    pub cfg: ModelConfig,
    pub encoder: PyramidEncoder,
    le_proj: Vec<Conv2d>,
    le_fuse: Vec<ConvUnit>,
    sfa: Vec<ConvUnit>,
    pred: Conv2d,
}

impl SsFormerI {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.pld_width;
        Ok(SsFormerI {
            cfg: cfg.clone(),
            encoder: PyramidEncoder::new("tb.encoder", &cfg.encoder)?,
            le_proj: (0..4)
                .map(|i| Conv2d::pointwise(format!("pld.le{i}.proj"), cfg.encoder.stage_dims[i], w))
                .collect(),
            le_fuse: (0..4).map(|i| ConvUnit::new(&format!("pld.le{i}.fuse"), w, w)).collect(),
            sfa: (0..3).map(|i| ConvUnit::new(&format!("pld.sfa.{i}"), 2 * w, w)).collect(),
            pred: Conv2d::pointwise("pld.pred", PLD_WIDTH, 1),
        })
    }

    pub fn init<T: Float>(&self, pi: &mut ParamInit<T>) {
        self.encoder.init(pi);
        for (p, f) in self.le_proj.iter().zip(&self.le_fuse) {
            p.init(pi);
            f.init(pi);
        }
        for u in &self.sfa {
            u.init(pi);
        }
        self.pred.init(pi);
        pi.constant(&self.pred.bias_name(), &[1], 0.0);
    }

    /// Logits at quarter resolution.
    pub fn forward<T: Float>(&self, cx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let (h, w) = (x.shape()[2] / 4, x.shape()[3] / 4);
        let pyr = self.encoder.forward(cx, x)?;
        let mut les = Vec::with_capacity(4);
        for ((lvl, p), f) in pyr.levels.iter().zip(&self.le_proj).zip(&self.le_fuse) {
            let y = f.forward(cx, &p.forward(cx, lvl)?)?;
            les.push(cx.tape.interpolate2d(&y, h, w, ResampleMode::Bilinear, false)?);
        }
        let mut f = les[3].clone();
        for (unit, shallow) in self.sfa.iter().zip(les[..3].iter().rev()) {
            f = unit.forward(cx, &cx.tape.concat(&[&f, shallow], 1)?)?;
        }
        self.pred.forward(cx, &f)
    }
}

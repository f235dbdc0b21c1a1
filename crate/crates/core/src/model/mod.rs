//! Model configurations and the assembled networks: FCBFormer (transformer
//! branch + fully convolutional branch + prediction head), its without-FCB
//! ablation, and the SSFormer-I baseline.

mod config;
mod encoder;
mod fcb;
mod head;
mod ssformer;

pub use config::{Architecture, EncoderConfig, FcbConfig, ModelConfig};
pub use encoder::PyramidEncoder;
pub use fcb::FullyConvBranch;
pub use head::PredictionHead;
pub use ssformer::SsFormerI;

use crate::error::{Error, Result};
use crate::nn::{Ctx, LocalEmphasis, ParamInit, StepwiseAggregate};
use crate::tensor::{Float, ParamStore, ResampleMode, Tape, Tensor, Var};

/// Pyramid encoder followed by local emphasis per level and stepwise
/// aggregation; emits 64 channels at quarter resolution.
#[derive(Debug, Clone)]
pub struct TransformerBranch {
    pub encoder: PyramidEncoder,
    pub les: Vec<LocalEmphasis>,
    pub sfa: StepwiseAggregate,
}

impl TransformerBranch {
    pub fn new(prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        Ok(TransformerBranch {
            encoder: PyramidEncoder::new(&format!("{prefix}.encoder"), &cfg.encoder)?,
            les: (0..4)
                .map(|i| LocalEmphasis::new(&format!("{prefix}.le{i}"), cfg.encoder.stage_dims[i]))
                .collect(),
            sfa: StepwiseAggregate::new(&format!("{prefix}.sfa")),
        })
    }

    pub fn init<T: Float>(&self, pi: &mut ParamInit<T>) {
        self.encoder.init(pi);
        for le in &self.les {
            le.init(pi);
        }
        self.sfa.init(pi);
    }

    pub fn forward<T: Float>(&self, cx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let target = (x.shape()[2] / 4, x.shape()[3] / 4);
        let pyr = self.encoder.forward(cx, x)?;
        let les = pyr
            .levels
            .iter()
            .zip(&self.les)
            .map(|(lvl, le)| le.forward(cx, lvl, target))
            .collect::<Result<Vec<_>>>()?;
        self.sfa.forward(cx, &les)
    }
}

/// Intermediate outputs of one FCBFormer forward pass.
pub struct FcbFormerOutput<T> {
    pub tb: Var<T>,
    pub fcb: Var<T>,
    pub logits: Var<T>,
}

#[derive(Debug, Clone)]
pub struct FcbFormer {
    pub cfg: ModelConfig,
    pub tb: TransformerBranch,
    pub fcb: FullyConvBranch,
    pub ph: PredictionHead,
}

impl FcbFormer {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let fcb = FullyConvBranch::new("fcb", &cfg.fcb)?;
        let ph = PredictionHead::new("ph", cfg.pld_width, fcb.out_channels(), cfg.ph_width);
        Ok(FcbFormer { cfg: cfg.clone(), tb: TransformerBranch::new("tb", cfg)?, fcb, ph })
    }

    pub fn init<T: Float>(&self, pi: &mut ParamInit<T>) {
        self.tb.init(pi);
        self.fcb.init(pi);
        self.ph.init(pi);
    }

    pub fn forward_parts<T: Float>(&self, cx: &Ctx<T>, x: &Var<T>) -> Result<FcbFormerOutput<T>> {
        let tb = self.tb.forward(cx, x)?;
        let fcb = self.fcb.forward(cx, x)?;
        let logits = self.ph.forward(cx, &tb, &fcb)?;
        Ok(FcbFormerOutput { tb, fcb, logits })
    }

    pub fn forward<T: Float>(&self, cx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        Ok(self.forward_parts(cx, x)?.logits)
    }

    /// Same as [`forward`](Self::forward) with the convolutional branch
    /// replaced by zeros; FCB parameters are never read.
    pub fn forward_without_fcb<T: Float>(&self, cx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let tb = self.tb.forward(cx, x)?;
        let s = x.shape();
        let zeros = cx.tape.constant(Tensor::zeros(&[s[0], self.fcb.out_channels(), s[2], s[3]]));
        self.ph.forward(cx, &tb, &zeros)
    }
}

/// Either network, selected by [`ModelConfig::architecture`].
#[derive(Debug, Clone)]
pub enum Model {
    Fcbformer(FcbFormer),
    SsformerI(SsFormerI),
}

impl Model {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        Ok(match cfg.architecture {
            Architecture::Fcbformer => Model::Fcbformer(FcbFormer::new(cfg)?),
            Architecture::SsformerI => Model::SsformerI(SsFormerI::new(cfg)?),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::Fcbformer(m) => &m.cfg,
            Model::SsformerI(m) => &m.cfg,
        }
    }

    pub fn init_params<T: Float>(&self, seed: u64) -> ParamStore<T> {
        let mut store = ParamStore::new();
        let mut pi = ParamInit::new(&mut store, seed);
        match self {
            Model::Fcbformer(m) => m.init(&mut pi),
            Model::SsformerI(m) => m.init(&mut pi),
        }
        store
    }

    /// Spatial size of the logits produced by [`forward`](Self::forward).
    pub fn output_hw(&self) -> (usize, usize) {
        let (h, w) = self.config().input_hw;
        match self {
            Model::Fcbformer(_) => (h, w),
            Model::SsformerI(_) => (h / 4, w / 4),
        }
    }

    /// Logits at the training resolution ([`output_hw`](Self::output_hw)).
    pub fn forward<T: Float>(&self, cx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        match self {
            Model::Fcbformer(m) => m.forward(cx, x),
            Model::SsformerI(m) => m.forward(cx, x),
        }
    }

    /// Full-size foreground probabilities `[N, 1, H, W]` on a non-recording
    /// tape. Quarter-scale predictions are bilinearly upsampled first.
    pub fn predict_probs<T: Float>(&self, params: &ParamStore<T>, x: &Tensor<T>, ablate_fcb: bool) -> Result<Tensor<T>> {
        let tape = Tape::inference();
        let cx = Ctx::new(&tape, params);
        let xv = tape.constant(x.clone());
        let logits = match (self, ablate_fcb) {
            (Model::Fcbformer(m), false) => m.forward(&cx, &xv)?,
            (Model::Fcbformer(m), true) => m.forward_without_fcb(&cx, &xv)?,
            (Model::SsformerI(_), true) => {
                return Err(Error::Config("the FCB ablation applies only to FCBFormer".into()))
            }
            (Model::SsformerI(m), false) => m.forward(&cx, &xv)?,
        };
        let p = tape.sigmoid(&logits);
        let s = x.shape();
        Ok(tape.interpolate2d(&p, s[2], s[3], ResampleMode::Bilinear, false)?.into_tensor())
    }
}

/// Builds the model for `cfg` and initializes its parameters.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<f32>> {
    Ok(Model::new(cfg)?.init_params(seed))
}

/// Total number of stored scalars.
pub fn param_count<T: Float>(params: &ParamStore<T>) -> usize {
    params.param_count()
}

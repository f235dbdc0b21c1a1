use super::config::EncoderConfig;
use crate::error::{Error, Result};
use crate::nn::{to_spatial, AttentionConfig, Ctx, FeaturePyramid, Norm, OverlapPatchEmbed, ParamInit, TransformerBlock};
use crate::tensor::{Float, Var};

#[derive(Debug, Clone)]
struct Stage {
    embed: OverlapPatchEmbed,
    blocks: Vec<TransformerBlock>,
    norm: Norm,
}

/// Four-stage pyramid transformer with overlapping patch embeddings and
/// linear spatial-reduction attention.
#[derive(Debug, Clone)]
pub struct PyramidEncoder {
    stages: Vec<Stage>,
    pub cfg: EncoderConfig,
}

impl PyramidEncoder {
    pub fn new(prefix: &str, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut stages = Vec::with_capacity(4);
        let mut cin = 3;
        for i in 0..4 {
            let p = format!("{prefix}.stage{i}");
            let dim = cfg.stage_dims[i];
            let attn = AttentionConfig::new(dim, cfg.stage_heads[i], cfg.sr_pool)?;
            stages.push(Stage {
                embed: OverlapPatchEmbed::new(
                    &format!("{p}.embed"),
                    cin,
                    dim,
                    cfg.patch_kernels[i],
                    cfg.patch_strides[i],
                )?,
                blocks: (0..cfg.stage_depths[i])
                    .map(|j| TransformerBlock::new(&format!("{p}.block{j}"), attn, cfg.mlp_expansions[i]))
                    .collect(),
                norm: Norm::new(format!("{p}.norm"), dim),
            });
            cin = dim;
        }
        Ok(PyramidEncoder { stages, cfg: cfg.clone() })
    }

    pub fn init<T: Float>(&self, pi: &mut ParamInit<T>) {
        for s in &self.stages {
            s.embed.init(pi);
            for b in &s.blocks {
                b.init(pi);
            }
            s.norm.init(pi);
        }
    }

    pub fn forward<T: Float>(&self, cx: &Ctx<T>, x: &Var<T>) -> Result<FeaturePyramid<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 || s[2] % 32 != 0 || s[3] % 32 != 0 {
            return Err(Error::shape("encoder", format!("need [N, 3, 32k, 32m], got {s:?}")));
        }
        let mut levels = Vec::with_capacity(4);
        let mut cur = x.clone();
        for st in &self.stages {
            let (mut tokens, h, w) = st.embed.forward(cx, &cur)?;
            for b in &st.blocks {
                tokens = b.forward(cx, &tokens, h, w)?;
            }
            let tokens = st.norm.layer(cx, &tokens)?;
            cur = to_spatial(cx.tape, &tokens, h, w)?;
            levels.push(cur.clone());
        }
        Ok(FeaturePyramid { levels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamStore, Tape, Tensor};

    #[test]
    fn toy_pyramid_strides() {
        let cfg = EncoderConfig::toy();
        let enc = PyramidEncoder::new("enc", &cfg).unwrap();
        let mut store = ParamStore::<f32>::new();
        enc.init(&mut ParamInit::new(&mut store, 0));
        let tape = Tape::inference();
        let x = tape.constant(Tensor::full(&[2, 3, 64, 64], 0.3));
        let pyr = enc.forward(&Ctx::new(&tape, &store), &x).unwrap();
        assert!(pyr.is_well_formed());
        for (i, l) in pyr.levels.iter().enumerate() {
            let side = 64 >> (i + 2);
            assert_eq!(l.shape(), &[2, cfg.stage_dims[i], side, side]);
        }
    }

    #[test]
    fn rejects_non_multiple_of_32() {
        let enc = PyramidEncoder::new("enc", &EncoderConfig::toy()).unwrap();
        let mut store = ParamStore::<f32>::new();
        enc.init(&mut ParamInit::new(&mut store, 0));
        let tape = Tape::inference();
        let x = tape.constant(Tensor::zeros(&[1, 3, 48, 64]));
        assert!(enc.forward(&Ctx::new(&tape, &store), &x).is_err());
    }
}

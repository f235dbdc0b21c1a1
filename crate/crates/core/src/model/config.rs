use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::PLD_WIDTH;

/// Which network a config describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    #[default]
    Fcbformer,
    /// Encoder + plain progressive decoder predicting at quarter resolution.
    SsformerI,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub stage_depths: [usize; 4],
    pub stage_dims: [usize; 4],
    pub stage_heads: [usize; 4],
    pub patch_kernels: [usize; 4],
    pub patch_strides: [usize; 4],
    pub mlp_expansions: [usize; 4],
    pub sr_pool: usize,
}

impl EncoderConfig {
    /// Stage widths and depths of the 45M-parameter pyramid encoder.
    pub fn b3() -> Self {
        EncoderConfig {
            stage_depths: [3, 4, 18, 3],
            stage_dims: [64, 128, 320, 512],
            stage_heads: [1, 2, 5, 8],
            patch_kernels: [7, 3, 3, 3],
            patch_strides: [4, 2, 2, 2],
            mlp_expansions: [8, 8, 4, 4],
            sr_pool: 7,
        }
    }

    pub fn toy() -> Self {
        EncoderConfig {
            stage_depths: [1, 1, 1, 1],
            stage_dims: [16, 32, 64, 128],
            stage_heads: [1, 2, 4, 8],
            patch_kernels: [7, 3, 3, 3],
            patch_strides: [4, 2, 2, 2],
            mlp_expansions: [4, 4, 4, 4],
            sr_pool: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..4 {
            if self.stage_heads[i] == 0 || self.stage_dims[i] % self.stage_heads[i] != 0 {
                return Err(Error::Config(format!(
                    "encoder stage {i}: dim {} not divisible by {} heads",
                    self.stage_dims[i], self.stage_heads[i]
                )));
            }
            if self.patch_kernels[i] <= self.patch_strides[i] {
                return Err(Error::Config(format!("encoder stage {i}: patch kernel must exceed stride")));
            }
            if self.stage_depths[i] == 0 || self.mlp_expansions[i] == 0 {
                return Err(Error::Config(format!("encoder stage {i}: depth and expansion must be positive")));
            }
        }
        if self.patch_strides.iter().product::<usize>() != 32 {
            return Err(Error::Config("encoder strides must multiply to 32".into()));
        }
        if self.sr_pool == 0 {
            return Err(Error::Config("sr_pool must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FcbConfig {
    pub base_width: usize,
    pub n_down: usize,
    pub n_up: usize,
    pub rb_per_stage: usize,
}

impl FcbConfig {
    /// Width multiplier at encoder level `level` (after `level` downsamples):
    /// doubles after every second downsample.
    pub fn encoder_mult(&self, level: usize) -> usize {
        1 << (level / 2)
    }

    /// Width multiplier after `ups` upsamples: halves after every second one.
    pub fn decoder_mult(&self, ups: usize) -> usize {
        1 << (self.n_down / 2 - ups / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_down != self.n_up {
            return Err(Error::Config(format!("FCB needs n_down == n_up, got {} and {}", self.n_down, self.n_up)));
        }
        if self.base_width == 0 || self.rb_per_stage == 0 || self.n_down == 0 {
            return Err(Error::Config("FCB widths and depths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub architecture: Architecture,
    pub input_hw: (usize, usize),
    pub encoder: EncoderConfig,
    pub fcb: FcbConfig,
    pub pld_width: usize,
    pub ph_width: usize,
}

impl ModelConfig {
    pub const PRESETS: [&'static str; 2] = ["full-352", "toy-64"];

    pub fn full_352() -> Self {
        ModelConfig {
            name: "full-352".into(),
            architecture: Architecture::Fcbformer,
            input_hw: (352, 352),
            encoder: EncoderConfig::b3(),
            fcb: FcbConfig { base_width: 32, n_down: 4, n_up: 4, rb_per_stage: 2 },
            pld_width: PLD_WIDTH,
            ph_width: 64,
        }
    }

    pub fn toy_64() -> Self {
        ModelConfig {
            name: "toy-64".into(),
            architecture: Architecture::Fcbformer,
            input_hw: (64, 64),
            encoder: EncoderConfig::toy(),
            fcb: FcbConfig { base_width: 32, n_down: 4, n_up: 4, rb_per_stage: 1 },
            pld_width: PLD_WIDTH,
            ph_width: 64,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full-352" => Ok(Self::full_352()),
            "toy-64" => Ok(Self::toy_64()),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected one of {:?})",
                Self::PRESETS
            ))),
        }
    }

    pub fn with_architecture(mut self, arch: Architecture) -> Self {
        self.architecture = arch;
        self
    }

    pub fn with_input_hw(mut self, h: usize, w: usize) -> Self {
        self.input_hw = (h, w);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_hw;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Config(format!("input size {h}×{w} must be a positive multiple of 32")));
        }
        let fcb_div = 1 << self.fcb.n_down;
        if h % fcb_div != 0 || w % fcb_div != 0 {
            return Err(Error::Config(format!("input size {h}×{w} not divisible by 2^{}", self.fcb.n_down)));
        }
        if self.pld_width != PLD_WIDTH || self.ph_width != 64 {
            return Err(Error::Config("decoder and prediction-head widths are fixed at 64".into()));
        }
        self.encoder.validate()?;
        self.fcb.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in ModelConfig::PRESETS {
            ModelConfig::preset(p).unwrap().validate().unwrap();
        }
        assert!(ModelConfig::preset("b0").is_err());
    }

    #[test]
    fn fcb_width_schedule() {
        let f = ModelConfig::toy_64().fcb;
        let enc: Vec<usize> = (0..=4).map(|l| f.base_width * f.encoder_mult(l)).collect();
        assert_eq!(enc, vec![32, 32, 64, 64, 128]);
        let dec: Vec<usize> = (0..=4).map(|u| f.base_width * f.decoder_mult(u)).collect();
        assert_eq!(dec, vec![128, 128, 64, 64, 32]);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(ModelConfig::toy_64().with_input_hw(48, 64).validate().is_err());
        let mut c = ModelConfig::toy_64();
        c.ph_width = 32;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy_64();
        c.encoder.stage_heads[1] = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = ModelConfig::full_352().with_architecture(Architecture::SsformerI);
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"ssformer-i\""));
        assert_eq!(serde_json::from_str::<ModelConfig>(&s).unwrap(), c);
    }
}

use super::config::FcbConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx, ParamInit, ResidualBlock};
use crate::tensor::{Float, ResampleMode, Var};

#[derive(Debug, Clone)]
enum EncStep {
    Block(ResidualBlock),
    Down(Conv2d),
}

#[derive(Debug, Clone)]
struct DecLevel {
    blocks: Vec<ResidualBlock>,
    /// Nearest 2× upsample followed by this 3×3 conv; absent on the last level.
    up: Option<Conv2d>,
}

/// Full-resolution convolutional encoder–decoder. Every encoder output
/// (stem, each residual block, each downsample) is kept as a skip and
/// consumed, deepest first, by one decoder block at the same resolution.
#[derive(Debug, Clone)]
pub struct FullyConvBranch {
    pub cfg: FcbConfig,
    stem: Conv2d,
    enc: Vec<EncStep>,
    mid: Vec<ResidualBlock>,
    dec: Vec<DecLevel>,
}

impl FullyConvBranch {
    pub fn new(prefix: &str, cfg: &FcbConfig) -> Result<Self> {
        cfg.validate()?;
        let base = cfg.base_width;
        let stem = Conv2d::same(format!("{prefix}.stem"), 3, base, 3);
        let mut skips = vec![base];
        let mut enc = Vec::new();
        let mut ch = base;
        for level in 0..=cfg.n_down {
            let out = base * cfg.encoder_mult(level);
            for _ in 0..cfg.rb_per_stage {
                enc.push(EncStep::Block(ResidualBlock::new(&format!("{prefix}.enc.{}", enc.len()), ch, out)));
                ch = out;
                skips.push(ch);
            }
            if level < cfg.n_down {
                enc.push(EncStep::Down(Conv2d::new(format!("{prefix}.enc.{}", enc.len()), ch, ch, 3, 2, 1)));
                skips.push(ch);
            }
        }
        let mid = (0..2).map(|i| ResidualBlock::new(&format!("{prefix}.mid.{i}"), ch, ch)).collect();
        let mut dec = Vec::new();
        for ups in 0..=cfg.n_up {
            let out = base * cfg.decoder_mult(ups);
            let mut blocks = Vec::new();
            for b in 0..=cfg.rb_per_stage {
                let skip = skips.pop().expect("skip count matches decoder blocks");
                blocks.push(ResidualBlock::new(&format!("{prefix}.dec.{ups}.{b}"), ch + skip, out));
                ch = out;
            }
            let up = (ups < cfg.n_up).then(|| Conv2d::same(format!("{prefix}.dec.{ups}.up"), ch, ch, 3));
            dec.push(DecLevel { blocks, up });
        }
        debug_assert!(skips.is_empty());
        Ok(FullyConvBranch { cfg: cfg.clone(), stem, enc, mid, dec })
    }

    pub fn out_channels(&self) -> usize {
        self.cfg.base_width * self.cfg.decoder_mult(self.cfg.n_up)
    }

    /// Strided downsample convs in order, for channel audits.
    pub fn downsamples(&self) -> impl Iterator<Item = &Conv2d> {
        self.enc.iter().filter_map(|s| match s {
            EncStep::Down(c) => Some(c),
            EncStep::Block(_) => None,
        })
    }

    /// Upsample convs in order, for channel audits.
    pub fn upsamples(&self) -> impl Iterator<Item = &Conv2d> {
        self.dec.iter().filter_map(|l| l.up.as_ref())
    }

    /// Output width of each encoder level, read from its residual blocks.
    pub fn encoder_level_widths(&self) -> Vec<usize> {
        let mut widths = Vec::new();
        let mut last = 0;
        for s in &self.enc {
            match s {
                EncStep::Block(rb) => last = rb.cout,
                EncStep::Down(_) => widths.push(last),
            }
        }
        widths.push(last);
        widths
    }

    /// Output width of each decoder level, deepest first.
    pub fn decoder_level_widths(&self) -> Vec<usize> {
        self.dec.iter().map(|l| l.blocks.last().map_or(0, |rb| rb.cout)).collect()
    }

    pub fn init<T: Float>(&self, pi: &mut ParamInit<T>) {
        self.stem.init(pi);
        for s in &self.enc {
            match s {
                EncStep::Block(rb) => rb.init(pi),
                EncStep::Down(c) => c.init(pi),
            }
        }
        for rb in &self.mid {
            rb.init(pi);
        }
        for l in &self.dec {
            for rb in &l.blocks {
                rb.init(pi);
            }
            if let Some(c) = &l.up {
                c.init(pi);
            }
        }
    }

    pub fn forward<T: Float>(&self, cx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let s = x.shape();
        let div = 1 << self.cfg.n_down;
        if s.len() != 4 || s[1] != 3 || s[2] % div != 0 || s[3] % div != 0 {
            return Err(Error::shape("fcb", format!("need [N, 3, H, W] with H, W divisible by {div}, got {s:?}")));
        }
        let t = cx.tape;
        let mut h = self.stem.forward(cx, x)?;
        let mut skips = vec![h.clone()];
        for step in &self.enc {
            h = match step {
                EncStep::Block(rb) => rb.forward(cx, &h)?,
                EncStep::Down(c) => c.forward(cx, &h)?,
            };
            skips.push(h.clone());
        }
        for rb in &self.mid {
            h = rb.forward(cx, &h)?;
        }
        for level in &self.dec {
            for rb in &level.blocks {
                let skip = skips.pop().expect("skip count matches decoder blocks");
                h = rb.forward(cx, &t.concat(&[&h, &skip], 1)?)?;
            }
            if let Some(up) = &level.up {
                let (hh, ww) = (h.shape()[2], h.shape()[3]);
                h = t.interpolate2d(&h, 2 * hh, 2 * ww, ResampleMode::Nearest, false)?;
                h = up.forward(cx, &h)?;
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tensor::{ParamStore, Tape, Tensor};

    #[test]
    fn widths_follow_schedule() {
        let fcb = FullyConvBranch::new("fcb", &ModelConfig::full_352().fcb).unwrap();
        let down: Vec<usize> = fcb.downsamples().map(|c| c.cout).collect();
        assert_eq!(down, vec![32, 32, 64, 64]);
        assert_eq!(fcb.encoder_level_widths(), vec![32, 32, 64, 64, 128]);
        let up: Vec<usize> = fcb.upsamples().map(|c| c.cout).collect();
        assert_eq!(up, vec![128, 128, 64, 64]);
        assert_eq!(fcb.decoder_level_widths(), vec![128, 128, 64, 64, 32]);
        assert_eq!(fcb.out_channels(), 32);
    }

    #[test]
    fn full_resolution_output() {
        let fcb = FullyConvBranch::new("fcb", &ModelConfig::toy_64().fcb).unwrap();
        let mut store = ParamStore::<f32>::new();
        fcb.init(&mut ParamInit::new(&mut store, 5));
        let tape = Tape::inference();
        let x = tape.constant(Tensor::full(&[1, 3, 32, 48], 0.5));
        let y = fcb.forward(&Ctx::new(&tape, &store), &x).unwrap();
        assert_eq!(y.shape(), &[1, 32, 32, 48]);
        let bad = tape.constant(Tensor::zeros(&[1, 3, 24, 32]));
        assert!(fcb.forward(&Ctx::new(&tape, &store), &bad).is_err());
    }
}

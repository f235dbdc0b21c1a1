use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx, ParamInit, ResidualBlock};
use crate::tensor::{Float, ResampleMode, Var};

/// Fuses the upsampled transformer features with the full-resolution
/// convolutional features and predicts one channel of logits.
#[derive(Debug, Clone)]
pub struct PredictionHead {
    pub rbs: [ResidualBlock; 2],
    pub out: Conv2d,
}

impl PredictionHead {
    pub fn new(prefix: &str, tb_channels: usize, fcb_channels: usize, width: usize) -> Self {
        PredictionHead {
            rbs: [
                ResidualBlock::new(&format!("{prefix}.rb0"), tb_channels + fcb_channels, width),
                ResidualBlock::new(&format!("{prefix}.rb1"), width, width),
            ],
            out: Conv2d::pointwise(format!("{prefix}.out"), width, 1),
        }
    }

    /// The prediction bias starts at zero.
    pub fn init<T: Float>(&self, pi: &mut ParamInit<T>) {
        for rb in &self.rbs {
            rb.init(pi);
        }
        self.out.init(pi);
        pi.constant(&self.out.bias_name(), &[1], 0.0);
    }

    pub fn forward<T: Float>(&self, cx: &Ctx<T>, tb: &Var<T>, fcb: &Var<T>) -> Result<Var<T>> {
        let (ts, fs) = (tb.shape(), fcb.shape());
        if ts.len() != 4 || fs.len() != 4 || ts[0] != fs[0] || fs[2] != 4 * ts[2] || fs[3] != 4 * ts[3] {
            return Err(Error::shape(
                "prediction_head",
                format!("expected a 4× spatial ratio, got {ts:?} and {fs:?}"),
            ));
        }
        let t = cx.tape;
        let up = t.interpolate2d(tb, fs[2], fs[3], ResampleMode::Bilinear, false)?;
        let mut h = t.concat(&[&up, fcb], 1)?;
        for rb in &self.rbs {
            h = rb.forward(cx, &h)?;
        }
        self.out.forward(cx, &h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamStore, Tape, Tensor};

    #[test]
    fn zero_output_conv_gives_half_probability() {
        let ph = PredictionHead::new("ph", 64, 32, 64);
        let mut store = ParamStore::<f32>::new();
        ph.init(&mut ParamInit::new(&mut store, 2));
        store.get_mut("ph.out.weight").unwrap().data_mut().fill(0.0);
        let tape = Tape::inference();
        let tb = tape.constant(Tensor::full(&[1, 64, 16, 16], 0.7));
        let fcb = tape.constant(Tensor::full(&[1, 32, 64, 64], -0.2));
        let logits = ph.forward(&Ctx::new(&tape, &store), &tb, &fcb).unwrap();
        assert_eq!(logits.shape(), &[1, 1, 64, 64]);
        let p = tape.sigmoid(&logits);
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn ratio_mismatch_rejected() {
        let ph = PredictionHead::new("ph", 64, 32, 64);
        let mut store = ParamStore::<f32>::new();
        ph.init(&mut ParamInit::new(&mut store, 2));
        let tape = Tape::inference();
        let tb = tape.constant(Tensor::zeros(&[1, 64, 16, 16]));
        let fcb = tape.constant(Tensor::zeros(&[1, 32, 32, 32]));
        assert!(ph.forward(&Ctx::new(&tape, &store), &tb, &fcb).is_err());
    }
}

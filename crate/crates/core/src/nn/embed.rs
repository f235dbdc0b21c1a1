use super::layers::{to_tokens, Conv2d, Ctx, Norm, ParamInit};
use crate::error::{Error, Result};
use crate::tensor::{Float, Var};

/// Strided convolution with kernel larger than its stride (so neighbouring
/// patches overlap), flattened to tokens and layer-normalized.
#[derive(Debug, Clone)]
pub struct OverlapPatchEmbed {
    pub proj: Conv2d,
    pub norm: Norm,
}

impl OverlapPatchEmbed {
    pub fn new(prefix: &str, cin: usize, embed_dim: usize, kernel: usize, stride: usize) -> Result<Self> {
        if kernel <= stride {
            return Err(Error::arg(
                "overlap_patch_embed",
                format!("kernel {kernel} must exceed stride {stride} for patches to overlap"),
            ));
        }
        Ok(OverlapPatchEmbed {
            proj: Conv2d::new(format!("{prefix}.proj"), cin, embed_dim, kernel, stride, kernel / 2),
            norm: Norm::new(format!("{prefix}.norm"), embed_dim),
        })
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let (k, s, p) = (self.proj.kernel, self.proj.opts.stride.0, self.proj.opts.padding.0);
        ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1)
    }

    pub fn init<T: Float>(&self, pi: &mut ParamInit<T>) {
        self.proj.init(pi);
        self.norm.init(pi);
    }

    /// Returns `([N, H'·W', D], H', W')`.
    pub fn forward<T: Float>(&self, cx: &Ctx<T>, x: &Var<T>) -> Result<(Var<T>, usize, usize)> {
        let y = self.proj.forward(cx, x)?;
        let (h, w) = (y.shape()[2], y.shape()[3]);
        let tokens = to_tokens(cx.tape, &y)?;
        Ok((self.norm.layer(cx, &tokens)?, h, w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamStore, Tape, Tensor};

    #[test]
    fn token_counts() {
        for (hw, k, s, d, want) in [(64, 7, 4, 8, 256), (16, 3, 2, 4, 64)] {
            let pe = OverlapPatchEmbed::new("pe", 3, d, k, s).unwrap();
            let mut store = ParamStore::<f32>::new();
            pe.init(&mut ParamInit::new(&mut store, 1));
            let tape = Tape::inference();
            let x = tape.constant(Tensor::zeros(&[1, 3, hw, hw]));
            let (tokens, h, w) = pe.forward(&Ctx::new(&tape, &store), &x).unwrap();
            assert_eq!(tokens.shape(), &[1, want, d]);
            assert_eq!(h * w, want);
            assert_eq!(pe.output_hw(hw, hw), (h, w));
        }
    }

    #[test]
    fn non_overlapping_kernel_rejected() {
        assert!(OverlapPatchEmbed::new("pe", 3, 8, 4, 4).is_err());
        assert!(OverlapPatchEmbed::new("pe", 3, 8, 2, 4).is_err());
    }

    #[test]
    fn delta_image_reads_out_kernel_column() {
        let d = 3;
        let pe = OverlapPatchEmbed::new("pe", 1, d, 3, 2).unwrap();
        let mut store = ParamStore::<f64>::new();
        pe.init(&mut ParamInit::new(&mut store, 3));
        store.insert("pe.proj.bias", Tensor::zeros(&[d]));
        let weight = store.get("pe.proj.weight").unwrap().clone();
        // delta at (3, 3); stride 2, pad 1 → token (oy, ox) reads tap (3 + 1 − 2·oy, 3 + 1 − 2·ox)
        let mut img = vec![0.0; 64];
        img[3 * 8 + 3] = 1.0;
        let tape = Tape::inference();
        let x = tape.constant(Tensor::new(&[1, 1, 8, 8], img).unwrap());
        let (tokens, h, w) = pe.forward(&Ctx::new(&tape, &store), &x).unwrap();
        assert_eq!((h, w), (4, 4));
        for (oy, ox) in [(1, 1), (2, 2), (1, 2), (2, 1)] {
            let (ky, kx) = (4 - 2 * oy, 4 - 2 * ox);
            let column: Vec<f64> = (0..d).map(|c| weight.at4(c, 0, ky, kx)).collect();
            let mean = column.iter().sum::<f64>() / d as f64;
            let var = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let tok = &tokens.data()[(oy * 4 + ox) * d..][..d];
            for (t, c) in tok.iter().zip(&column) {
                let want = (c - mean) / (var + Norm::EPS_LAYER).sqrt();
                assert!((t - want).abs() < 1e-12, "token ({oy},{ox}): {t} vs {want}");
            }
        }
        // a token whose receptive field misses the delta is all zeros
        assert!(tokens.data()[..d].iter().all(|&v| v == 0.0));
    }
}

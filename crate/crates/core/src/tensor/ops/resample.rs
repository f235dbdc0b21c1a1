use crate::error::{Error, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMode {
    Nearest,
    Bilinear,
}

/// Sparse 1-d resampling matrix: each output position is a weighted sum of
/// a few input positions. 2-d resampling applies one of these per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisWeights {
    in_len: usize,
    taps: Vec<Vec<(usize, f64)>>,
}

impl AxisWeights {
    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.taps.len()
    }

    pub fn taps(&self, out: usize) -> &[(usize, f64)] {
        &self.taps[out]
    }

    /// Source index `floor(i · in / out)`.
    pub fn nearest(in_len: usize, out_len: usize) -> Self {
        let taps = (0..out_len)
            .map(|i| vec![((i * in_len / out_len).min(in_len - 1), 1.0)])
            .collect();
        AxisWeights { in_len, taps }
    }

    /// Half-pixel-centred triangle filter. With `antialias`, the filter
    /// support widens by the downscale factor when shrinking, so the result
    /// averages every covered input sample.
    pub fn linear(in_len: usize, out_len: usize, antialias: bool) -> Self {
        let scale = in_len as f64 / out_len as f64;
        let support = if antialias { scale.max(1.0) } else { 1.0 };
        let taps = (0..out_len)
            .map(|i| {
                let centre = (i as f64 + 0.5) * scale;
                let lo = ((centre - support).floor().max(0.0)) as usize;
                let hi = ((centre + support).ceil() as usize).min(in_len);
                let mut taps: Vec<(usize, f64)> = (lo..hi)
                    .filter_map(|j| {
                        let w = 1.0 - ((j as f64 + 0.5 - centre) / support).abs();
                        (w > 0.0).then_some((j, w))
                    })
                    .collect();
                let total: f64 = taps.iter().map(|t| t.1).sum();
                taps.iter_mut().for_each(|t| t.1 /= total);
                taps
            })
            .collect();
        AxisWeights { in_len, taps }
    }

    /// Adaptive average pooling bins `[floor(i·in/out), ceil((i+1)·in/out))`.
    pub fn adaptive_avg(in_len: usize, out_len: usize) -> Self {
        let taps = (0..out_len)
            .map(|i| {
                let lo = i * in_len / out_len;
                let hi = ((i + 1) * in_len).div_ceil(out_len);
                let w = 1.0 / (hi - lo) as f64;
                (lo..hi).map(|j| (j, w)).collect()
            })
            .collect();
        AxisWeights { in_len, taps }
    }

    pub fn is_identity(&self) -> bool {
        self.taps.len() == self.in_len
            && self.taps.iter().enumerate().all(|(i, t)| t.len() == 1 && t[0] == (i, 1.0))
    }
}

/// `out[.., o, ..] = Σ w · x[.., i, ..]` along one axis of a block
/// `[outer, len, inner]`.
fn apply_axis<T: Float>(x: &[T], outer: usize, inner: usize, aw: &AxisWeights, transpose: bool) -> Vec<T> {
    let (src_len, dst_len) = if transpose {
        (aw.out_len(), aw.in_len)
    } else {
        (aw.in_len, aw.out_len())
    };
    let mut out = vec![T::zero(); outer * dst_len * inner];
    for o in 0..outer {
        let src = &x[o * src_len * inner..(o + 1) * src_len * inner];
        let dst = &mut out[o * dst_len * inner..(o + 1) * dst_len * inner];
        for (oi, taps) in aw.taps.iter().enumerate() {
            for &(ii, w) in taps {
                let w = T::c(w);
                let (s, d) = if transpose { (oi, ii) } else { (ii, oi) };
                let srow = &src[s * inner..(s + 1) * inner];
                let drow = &mut dst[d * inner..(d + 1) * inner];
                drow.iter_mut().zip(srow).for_each(|(a, &b)| *a += w * b);
            }
        }
    }
    out
}

impl<T: Float> Tape<T> {
    /// Separable linear resampling of the two trailing axes of `[N, C, H, W]`.
    pub fn resample2d(&self, x: &Var<T>, rows: &AxisWeights, cols: &AxisWeights) -> Result<Var<T>> {
        self.resample2d_as("resample2d", x, rows, cols)
    }

    /// Records the resample under `op`, so faults and errors name the caller.
    fn resample2d_as(&self, op: &'static str, x: &Var<T>, rows: &AxisWeights, cols: &AxisWeights) -> Result<Var<T>> {
        let s = x.shape();
        if s.len() != 4 || s[2] != rows.in_len || s[3] != cols.in_len {
            return Err(Error::shape(
                op,
                format!("input {s:?} vs weights {}×{}", rows.in_len, cols.in_len),
            ));
        }
        let (nc, h) = (s[0] * s[1], s[2]);
        let (oh, ow) = (rows.out_len(), cols.out_len());
        let tmp = apply_axis(x.data(), nc * h, 1, cols, false);
        let out = apply_axis(&tmp, nc, ow, rows, false);
        let (rows, cols) = (rows.clone(), cols.clone());
        Ok(self.record(
            op,
            &[x],
            Tensor::from_parts(vec![s[0], s[1], oh, ow], out),
            Box::new(move |g, _| {
                let t = apply_axis(g, nc, ow, &rows, true);
                vec![Some(apply_axis(&t, nc * h, 1, &cols, true))]
            }),
        ))
    }

    /// Resizes `[N, C, H, W]` to `[N, C, out_h, out_w]`. Equal sizes return the
    /// input unchanged.
    pub fn interpolate2d(
        &self,
        x: &Var<T>,
        out_h: usize,
        out_w: usize,
        mode: ResampleMode,
        antialias: bool,
    ) -> Result<Var<T>> {
        if antialias && mode == ResampleMode::Nearest {
            return Err(Error::arg("interpolate2d", "antialias requires bilinear mode"));
        }
        if out_h == 0 || out_w == 0 {
            return Err(Error::arg("interpolate2d", "output extent must be at least 1"));
        }
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::shape("interpolate2d", format!("expected 4-d input, got {s:?}")));
        }
        if (s[2], s[3]) == (out_h, out_w) {
            return Ok(x.clone());
        }
        let (rows, cols) = match mode {
            ResampleMode::Nearest => (AxisWeights::nearest(s[2], out_h), AxisWeights::nearest(s[3], out_w)),
            ResampleMode::Bilinear => (
                AxisWeights::linear(s[2], out_h, antialias),
                AxisWeights::linear(s[3], out_w, antialias),
            ),
        };
        self.resample2d_as("interpolate2d", x, &rows, &cols)
    }

    pub fn adaptive_avg_pool2d(&self, x: &Var<T>, out_h: usize, out_w: usize) -> Result<Var<T>> {
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::shape("adaptive_avg_pool2d", format!("expected 4-d input, got {s:?}")));
        }
        self.resample2d_as("adaptive_avg_pool2d", x, &AxisWeights::adaptive_avg(s[2], out_h), &AxisWeights::adaptive_avg(s[3], out_w))
    }
}

/// Resizes a single `[C, H, W]` tensor outside any tape.
pub fn resize_chw<T: Float>(x: &Tensor<T>, out_h: usize, out_w: usize, antialias: bool) -> Tensor<T> {
    let s = x.shape();
    if (s[1], s[2]) == (out_h, out_w) {
        return x.clone();
    }
    let rows = AxisWeights::linear(s[1], out_h, antialias);
    let cols = AxisWeights::linear(s[2], out_w, antialias);
    let tmp = apply_axis(x.data(), s[0] * s[1], 1, &cols, false);
    Tensor::from_parts(vec![s[0], out_h, out_w], apply_axis(&tmp, s[0], out_w, &rows, false))
}

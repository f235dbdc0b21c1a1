use crate::error::{Error, Result};
use crate::tensor::{gemm, Float, Tape, Tensor, Var};

/// Stride, zero padding and channel grouping of a 2-d convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Conv2dOptions { stride: (1, 1), padding: (0, 0), groups: 1 }
    }
}

impl Conv2dOptions {
    pub fn new(stride: usize, padding: usize) -> Self {
        Conv2dOptions { stride: (stride, stride), padding: (padding, padding), groups: 1 }
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }
}

/// Unfolds one `[c, h, w]` block into `[c·kh·kw, oh·ow]` columns.
fn im2col<T: Float>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let ohw = g.oh * g.ow;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ky) as isize - g.ph as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.sw + kx) as isize - g.pw as isize;
                        *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating overlaps.
fn col2im<T: Float>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let ohw = g.oh * g.ow;
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * ohw..(row + 1) * ohw];
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ky) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.sw + kx) as isize - g.pw as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Float> Tape<T> {
    /// Zero-padded 2-d cross-correlation of `[N, Cin, H, W]` with
    /// `[Cout, Cin/groups, kh, kw]`.
    pub fn conv2d(
        &self,
        x: &Var<T>,
        weight: &Var<T>,
        bias: Option<&Var<T>>,
        opts: Conv2dOptions,
    ) -> Result<Var<T>> {
        let (xs, ws) = (x.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape("conv2d", format!("input {xs:?}, weight {ws:?}: both must be 4-d")));
        }
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, cin_g, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        let groups = opts.groups;
        let (sh, sw) = opts.stride;
        let (ph, pw) = opts.padding;
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(Error::shape("conv2d", format!("{groups} groups do not divide Cin={cin}, Cout={cout}")));
        }
        if cin / groups != cin_g {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels, weight expects {} ({cin_g} per group × {groups})", cin_g * groups),
            ));
        }
        if sh == 0 || sw == 0 {
            return Err(Error::arg("conv2d", "stride must be at least 1"));
        }
        if kh > h + 2 * ph || kw > w + 2 * pw {
            return Err(Error::shape("conv2d", format!("kernel {kh}×{kw} exceeds padded input {}×{}", h + 2 * ph, w + 2 * pw)));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(Error::shape("conv2d", format!("bias {:?}, want [{cout}]", b.shape())));
            }
        }
        let oh = (h + 2 * ph - kh) / sh + 1;
        let ow = (w + 2 * pw - kw) / sw + 1;
        let geo = Geometry { c: cin_g, h, w, kh, kw, sh, sw, ph, pw, oh, ow };
        let cout_g = cout / groups;
        let k = geo.rows();
        let ohw = oh * ow;
        let in_block = cin_g * h * w;

        let mut out = vec![T::zero(); n * cout * ohw];
        let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); k * ohw] };
        for s in 0..n {
            for g in 0..groups {
                let xin = &x.data()[(s * cin + g * cin_g) * h * w..][..in_block];
                let rhs: &[T] = if geo.is_pointwise() {
                    xin
                } else {
                    im2col(xin, &geo, &mut cols);
                    &cols
                };
                let wg = &weight.data()[g * cout_g * k..(g + 1) * cout_g * k];
                let dst = &mut out[(s * cout + g * cout_g) * ohw..][..cout_g * ohw];
                gemm(false, false, cout_g, ohw, k, T::one(), wg, rhs, T::zero(), dst);
            }
            if let Some(b) = bias {
                for (co, &bv) in b.data().iter().enumerate() {
                    out[(s * cout + co) * ohw..][..ohw].iter_mut().for_each(|v| *v += bv);
                }
            }
        }

        let (xv, wv) = (x.arc(), weight.arc());
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.record(
            "conv2d",
            &inputs,
            Tensor::from_parts(vec![n, cout, oh, ow], out),
            Box::new(move |gout, needs| {
                let mut gx = needs[0].then(|| vec![T::zero(); n * cin * h * w]);
                let mut gw = needs[1].then(|| vec![T::zero(); cout * k]);
                let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); k * ohw] };
                for s in 0..n {
                    for g in 0..groups {
                        let go = &gout[(s * cout + g * cout_g) * ohw..][..cout_g * ohw];
                        if let Some(gw) = gw.as_mut() {
                            let xin = &xv.data()[(s * cin + g * cin_g) * h * w..][..in_block];
                            let rhs: &[T] = if geo.is_pointwise() {
                                xin
                            } else {
                                im2col(xin, &geo, &mut cols);
                                &cols
                            };
                            let dst = &mut gw[g * cout_g * k..(g + 1) * cout_g * k];
                            gemm(false, true, cout_g, k, ohw, T::one(), go, rhs, T::one(), dst);
                        }
                        if let Some(gx) = gx.as_mut() {
                            let wg = &wv.data()[g * cout_g * k..(g + 1) * cout_g * k];
                            let dst = &mut gx[(s * cin + g * cin_g) * h * w..][..in_block];
                            if geo.is_pointwise() {
                                gemm(true, false, k, ohw, cout_g, T::one(), wg, go, T::one(), dst);
                            } else {
                                gemm(true, false, k, ohw, cout_g, T::one(), wg, go, T::zero(), &mut cols);
                                col2im(&cols, &geo, dst);
                            }
                        }
                    }
                }
                let mut res = vec![gx, gw];
                if needs.len() > 2 {
                    res.push(needs[2].then(|| {
                        let mut gb = vec![T::zero(); cout];
                        for s in 0..n {
                            for (co, b) in gb.iter_mut().enumerate() {
                                *b += gout[(s * cout + co) * ohw..][..ohw].iter().copied().sum::<T>();
                            }
                        }
                        gb
                    }));
                }
                res
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop convolution.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize, groups: usize) -> Tensor<f64> {
        let (n, h, wd) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        let (cout, cg, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let og = cout / groups;
        let mut out = vec![0.0; n * cout * oh * ow];
        for s in 0..n {
            for co in 0..cout {
                let g = co / og;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..cg {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.at4(s, g * cg + ci, iy as usize, ix as usize)
                                            * w.at4(co, ci, ky, kx);
                                    }
                                }
                            }
                        }
                        out[((s * cout + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(&[n, cout, oh, ow], out).unwrap()
    }

    fn ramp(shape: &[usize], k: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| ((i as f64) * k).sin()).collect()).unwrap()
    }

    #[test]
    fn two_by_two_sum() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap());
        let w = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
        let y = tape.conv2d(&x, &w, None, Conv2dOptions::default()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn strided_output_extent() {
        let tape = Tape::<f32>::inference();
        let x = tape.constant(Tensor::zeros(&[1, 1, 64, 64]));
        let w = tape.constant(Tensor::zeros(&[2, 1, 7, 7]));
        let y = tape.conv2d(&x, &w, None, Conv2dOptions::new(4, 3)).unwrap();
        assert_eq!(y.shape(), &[1, 2, 16, 16]);
    }

    #[test]
    fn matches_naive_loops() {
        let tape = Tape::<f64>::inference();
        for (stride, pad, groups, cin, cout, k) in
            [(1, 1, 1, 3, 4, 3), (2, 1, 1, 3, 2, 3), (4, 3, 1, 2, 3, 7), (1, 1, 4, 4, 4, 3), (1, 0, 1, 3, 5, 1)]
        {
            let x = ramp(&[2, cin, 9, 8], 0.37);
            let w = ramp(&[cout, cin / groups, k, k], 0.91);
            let want = naive_conv(&x, &w, stride, pad, groups);
            let got = tape
                .conv2d(
                    &tape.constant(x),
                    &tape.constant(w),
                    None,
                    Conv2dOptions::new(stride, pad).groups(groups),
                )
                .unwrap();
            assert_eq!(got.shape(), want.shape());
            assert!(got.value().max_abs_diff(&want) < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_descriptive() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[2, 2, 3, 3]));
        let err = tape.conv2d(&x, &w, None, Conv2dOptions::new(1, 1)).unwrap_err();
        assert!(err.to_string().contains("3 channels"), "{err}");
        let w = tape.constant(Tensor::zeros(&[2, 3, 9, 9]));
        assert!(tape.conv2d(&x, &w, None, Conv2dOptions::new(1, 1)).is_err());
    }
}

use crate::error::{Error, Result};
use crate::tensor::{gemm, Float, Tape, Tensor, Var};

impl<T: Float> Tape<T> {
    /// Affine map over the last axis: `x · wᵀ + b` with `w` of shape `[out, in]`.
    pub fn linear(&self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>) -> Result<Var<T>> {
        let xs = x.shape();
        let d_in = *xs.last().ok_or_else(|| Error::shape("linear", "scalar input"))?;
        if w.shape().len() != 2 || w.shape()[1] != d_in {
            return Err(Error::shape(
                "linear",
                format!("weight {:?} incompatible with input {xs:?}", w.shape()),
            ));
        }
        let d_out = w.shape()[0];
        if let Some(b) = b {
            if b.shape() != [d_out] {
                return Err(Error::shape("linear", format!("bias {:?}, want [{d_out}]", b.shape())));
            }
        }
        let rows = x.value().numel() / d_in;
        let mut out = vec![T::zero(); rows * d_out];
        if let Some(b) = b {
            for r in out.chunks_exact_mut(d_out) {
                r.copy_from_slice(b.data());
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        gemm(false, true, rows, d_out, d_in, T::one(), x.data(), w.data(), beta, &mut out);
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = d_out;

        let (xv, wv) = (x.arc(), w.arc());
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.record(
            "linear",
            &inputs,
            Tensor::from_parts(shape, out),
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| {
                    let mut gx = vec![T::zero(); rows * d_in];
                    gemm(false, false, rows, d_in, d_out, T::one(), g, wv.data(), T::zero(), &mut gx);
                    gx
                });
                let gw = needs[1].then(|| {
                    let mut gw = vec![T::zero(); d_out * d_in];
                    gemm(true, false, d_out, d_in, rows, T::one(), g, xv.data(), T::zero(), &mut gw);
                    gw
                });
                let mut res = vec![gx, gw];
                if needs.len() > 2 {
                    res.push(needs[2].then(|| {
                        let mut gb = vec![T::zero(); d_out];
                        for r in g.chunks_exact(d_out) {
                            gb.iter_mut().zip(r).for_each(|(a, &v)| *a += v);
                        }
                        gb
                    }));
                }
                res
            }),
        ))
    }

    /// Batched product of `[B, M, K]` with `[B, K, N]`, or with `[B, N, K]`
    /// transposed when `trans_b` is set.
    pub fn matmul(&self, a: &Var<T>, b: &Var<T>, trans_b: bool) -> Result<Var<T>> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(Error::shape(
                "matmul",
                format!("inner dims {k} vs {kb} ({sa:?} x {sb:?}, trans_b={trans_b})"),
            ));
        }
        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            gemm(
                false,
                trans_b,
                m,
                n,
                k,
                T::one(),
                &a.data()[i * m * k..(i + 1) * m * k],
                &b.data()[i * k * n..(i + 1) * k * n],
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let (av, bv) = (a.arc(), b.arc());
        Ok(self.record(
            "matmul",
            &[a, b],
            Tensor::from_parts(vec![batch, m, n], out),
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| {
                    let mut ga = vec![T::zero(); batch * m * k];
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &bv.data()[i * k * n..(i + 1) * k * n];
                        // dA = dC · op(B)ᵀ
                        gemm(false, !trans_b, m, k, n, T::one(), gi, bi, T::zero(), &mut ga[i * m * k..(i + 1) * m * k]);
                    }
                    ga
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![T::zero(); batch * k * n];
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &av.data()[i * m * k..(i + 1) * m * k];
                        let dst = &mut gb[i * k * n..(i + 1) * k * n];
                        if trans_b {
                            gemm(true, false, n, k, m, T::one(), gi, ai, T::zero(), dst);
                        } else {
                            gemm(true, false, k, n, m, T::one(), ai, gi, T::zero(), dst);
                        }
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }
}

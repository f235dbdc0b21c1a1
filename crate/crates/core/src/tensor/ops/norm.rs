use crate::error::{Error, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

/// Normalizes contiguous blocks of `block` elements to zero mean and unit
/// variance; returns the normalized values and per-block `1/sqrt(var+eps)`.
fn normalize_blocks<T: Float>(x: &[T], block: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let inv_n = T::one() / T::c(block as f64);
    let mut xhat = Vec::with_capacity(x.len());
    let mut rstd = Vec::with_capacity(x.len() / block);
    for chunk in x.chunks_exact(block) {
        let mean = chunk.iter().copied().sum::<T>() * inv_n;
        let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let r = T::one() / (var + eps).sqrt();
        xhat.extend(chunk.iter().map(|&v| (v - mean) * r));
        rstd.push(r);
    }
    (xhat, rstd)
}

/// Shared affine normalization. `channel(i)` maps a flat index to its
/// gamma/beta slot.
fn affine_norm<T: Float>(
    tape: &Tape<T>,
    op: &'static str,
    x: &Var<T>,
    block: usize,
    eps: T,
    gamma: &Var<T>,
    beta: &Var<T>,
    channel: impl Fn(usize) -> usize + 'static,
) -> Var<T> {
    let (xhat, rstd) = normalize_blocks(x.data(), block, eps);
    let (gd, bd) = (gamma.data(), beta.data());
    let out: Vec<T> = xhat
        .iter()
        .enumerate()
        .map(|(i, &v)| v * gd[channel(i)] + bd[channel(i)])
        .collect();
    let nc = gd.len();
    let gv = gamma.arc();
    tape.record(
        op,
        &[x, gamma, beta],
        Tensor::from_parts(x.shape().to_vec(), out),
        Box::new(move |g, needs| {
            let gamma = gv.data();
            let gx = needs[0].then(|| {
                let inv_n = T::one() / T::c(block as f64);
                let mut gx = Vec::with_capacity(g.len());
                for (bi, ((gb, xb), &r)) in g
                    .chunks_exact(block)
                    .zip(xhat.chunks_exact(block))
                    .zip(&rstd)
                    .enumerate()
                {
                    let base = bi * block;
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for (j, (&gv, &xv)) in gb.iter().zip(xb).enumerate() {
                        let d = gv * gamma[channel(base + j)];
                        sum_d += d;
                        sum_dx += d * xv;
                    }
                    for (j, (&gv, &xv)) in gb.iter().zip(xb).enumerate() {
                        let d = gv * gamma[channel(base + j)];
                        gx.push(r * (d - inv_n * sum_d - xv * inv_n * sum_dx));
                    }
                }
                gx
            });
            let ggamma = needs[1].then(|| {
                let mut acc = vec![T::zero(); nc];
                for (i, (&gv, &xv)) in g.iter().zip(&xhat).enumerate() {
                    acc[channel(i)] += gv * xv;
                }
                acc
            });
            let gbeta = needs[2].then(|| {
                let mut acc = vec![T::zero(); nc];
                for (i, &gv) in g.iter().enumerate() {
                    acc[channel(i)] += gv;
                }
                acc
            });
            vec![gx, ggamma, gbeta]
        }),
    )
}

impl<T: Float> Tape<T> {
    /// Group normalization over `[N, C, ...]`: statistics per (sample, group).
    pub fn group_norm(
        &self,
        x: &Var<T>,
        num_groups: usize,
        eps: f64,
        gamma: &Var<T>,
        beta: &Var<T>,
    ) -> Result<Var<T>> {
        let s = x.shape();
        if s.len() < 2 {
            return Err(Error::shape("group_norm", format!("input {s:?} needs a channel axis")));
        }
        let c = s[1];
        if num_groups == 0 || c % num_groups != 0 {
            return Err(Error::shape("group_norm", format!("{c} channels not divisible into {num_groups} groups")));
        }
        if eps <= 0.0 {
            return Err(Error::arg("group_norm", "eps must be positive"));
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shape("group_norm", format!("affine params must be [{c}]")));
        }
        let spatial: usize = s[2..].iter().product();
        let block = (c / num_groups) * spatial;
        Ok(affine_norm(self, "group_norm", x, block, T::c(eps), gamma, beta, move |i| {
            (i / spatial) % c
        }))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&self, x: &Var<T>, eps: f64, gamma: &Var<T>, beta: &Var<T>) -> Result<Var<T>> {
        let d = *x.shape().last().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        if eps <= 0.0 {
            return Err(Error::arg("layer_norm", "eps must be positive"));
        }
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::shape("layer_norm", format!("affine params must be [{d}]")));
        }
        Ok(affine_norm(self, "layer_norm", x, d, T::c(eps), gamma, beta, move |i| i % d))
    }
}

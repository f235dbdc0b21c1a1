use crate::error::{Error, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gathers `src` (of shape `shape`) into the axis order `perm`.
fn permute_data<T: Float>(src: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let gather: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for _ in 0..src.len() {
        out.push(src[offset]);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            offset += gather[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= gather[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

impl<T: Float> Tape<T> {
    pub fn reshape(&self, a: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        let n: usize = shape.iter().product();
        if n != a.value().numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", a.shape()),
            ));
        }
        let out = Tensor::from_parts(shape.to_vec(), a.data().to_vec());
        Ok(self.record("reshape", &[a], out, Box::new(|g, _| vec![Some(g.to_vec())])))
    }

    pub fn permute(&self, a: &Var<T>, perm: &[usize]) -> Result<Var<T>> {
        let nd = a.shape().len();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::arg("permute", format!("{perm:?} is not a permutation of {nd} axes")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| a.shape()[p]).collect();
        let data = permute_data(a.data(), a.shape(), perm);
        let mut inverse = vec![0; nd];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let grad_shape = out_shape.clone();
        Ok(self.record(
            "permute",
            &[a],
            Tensor::from_parts(out_shape, data),
            Box::new(move |g, _| vec![Some(permute_data(g, &grad_shape, &inverse))]),
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&self, parts: &[&Var<T>], axis: usize) -> Result<Var<T>> {
        let first = parts.first().ok_or_else(|| Error::arg("concat", "no inputs"))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(Error::arg("concat", format!("axis {axis} out of range")));
        }
        for p in parts {
            let s = p.shape();
            let ok = s.len() == base.len()
                && s.iter().zip(base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let row: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base.to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        Ok(self.record(
            "concat",
            parts,
            Tensor::from_parts(shape, data),
            Box::new(move |g, needs| {
                let mut start = 0;
                widths
                    .iter()
                    .zip(needs)
                    .map(|(&w, &need)| {
                        let off = start;
                        start += w;
                        need.then(|| {
                            let mut gi = Vec::with_capacity(outer * w);
                            for o in 0..outer {
                                gi.extend_from_slice(&g[o * row + off..o * row + off + w]);
                            }
                            gi
                        })
                    })
                    .collect()
            }),
        ))
    }
}

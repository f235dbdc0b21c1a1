//! Parameterized primitive layers and deterministic parameter initialization.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Conv2dOptions, Float, ParamStore, Tape, Tensor, Var};

/// Forward-pass context: a tape plus the parameters being read.
#[derive(Clone, Copy)]
pub struct Ctx<'a, T> {
    pub tape: &'a Tape<T>,
    pub params: &'a ParamStore<T>,
}

impl<'a, T: Float> Ctx<'a, T> {
    pub fn new(tape: &'a Tape<T>, params: &'a ParamStore<T>) -> Self {
        Ctx { tape, params }
    }

    pub fn p(&self, name: &str) -> Result<Var<T>> {
        self.tape.param(self.params, name)
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

/// Fills a [`ParamStore`]. Every tensor draws from its own stream derived
/// from `(seed, name)`, so adding a layer never perturbs the others.
pub struct ParamInit<'a, T> {
    store: &'a mut ParamStore<T>,
    seed: u64,
}

impl<'a, T: Float> ParamInit<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        ParamInit { store, seed }
    }

    fn rng(&self, name: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(name));
        rng
    }

    /// `U(−1/√fan_in, 1/√fan_in)`.
    pub fn fan_in_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut rng = self.rng(name);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::c(dist.sample(&mut rng))).collect();
        self.store.insert(name, Tensor::from_parts(shape.to_vec(), data));
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) {
        self.store.insert(name, Tensor::full(shape, T::c(value)));
    }
}

/// Largest divisor of `channels` not exceeding 32.
pub fn group_count(channels: usize) -> usize {
    (1..=channels.min(32)).rev().find(|g| channels % g == 0).unwrap_or(1)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub opts: Conv2dOptions,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Conv2d { name: name.into(), cin, cout, kernel, opts: Conv2dOptions::new(stride, padding) }
    }

    /// Same-size `k×k` convolution.
    pub fn same(name: impl Into<String>, cin: usize, cout: usize, kernel: usize) -> Self {
        Self::new(name, cin, cout, kernel, 1, kernel / 2)
    }

    pub fn pointwise(name: impl Into<String>, cin: usize, cout: usize) -> Self {
        Self::new(name, cin, cout, 1, 1, 0)
    }

    /// One 3×3 filter per channel with zero padding 1.
    pub fn depthwise(name: impl Into<String>, channels: usize) -> Self {
        Conv2d {
            name: name.into(),
            cin: channels,
            cout: channels,
            kernel: 3,
            opts: Conv2dOptions::new(1, 1).groups(channels),
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init<T: Float>(&self, pi: &mut ParamInit<T>) {
        let cin_g = self.cin / self.opts.groups;
        let fan_in = cin_g * self.kernel * self.kernel;
        pi.fan_in_uniform(&self.weight_name(), &[self.cout, cin_g, self.kernel, self.kernel], fan_in);
        pi.fan_in_uniform(&self.bias_name(), &[self.cout], fan_in);
    }

    pub fn forward<T: Float>(&self, cx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let w = cx.p(&self.weight_name())?;
        let b = cx.p(&self.bias_name())?;
        cx.tape.conv2d(x, &w, Some(&b), self.opts)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub din: usize,
    pub dout: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, din: usize, dout: usize) -> Self {
        Linear { name: name.into(), din, dout, bias: true }
    }

    pub fn without_bias(name: impl Into<String>, din: usize, dout: usize) -> Self {
        Linear { bias: false, ..Linear::new(name, din, dout) }
    }

    pub fn init<T: Float>(&self, pi: &mut ParamInit<T>) {
        pi.fan_in_uniform(&format!("{}.weight", self.name), &[self.dout, self.din], self.din);
        if self.bias {
            pi.fan_in_uniform(&format!("{}.bias", self.name), &[self.dout], self.din);
        }
    }

    pub fn forward<T: Float>(&self, cx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let w = cx.p(&format!("{}.weight", self.name))?;
        let b = if self.bias { Some(cx.p(&format!("{}.bias", self.name))?) } else { None };
        cx.tape.linear(x, &w, b.as_ref())
    }
}

/// Shared gamma/beta pair; used by both group and layer normalization.
#[derive(Debug, Clone)]
pub struct Norm {
    pub name: String,
    pub channels: usize,
}

impl Norm {
    pub const EPS_GROUP: f64 = 1e-5;
    pub const EPS_LAYER: f64 = 1e-6;

    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Norm { name: name.into(), channels }
    }

    pub fn init<T: Float>(&self, pi: &mut ParamInit<T>) {
        pi.constant(&format!("{}.gamma", self.name), &[self.channels], 1.0);
        pi.constant(&format!("{}.beta", self.name), &[self.channels], 0.0);
    }

    fn affine<T: Float>(&self, cx: &Ctx<T>) -> Result<(Var<T>, Var<T>)> {
        Ok((cx.p(&format!("{}.gamma", self.name))?, cx.p(&format!("{}.beta", self.name))?))
    }

    pub fn group<T: Float>(&self, cx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let (g, b) = self.affine(cx)?;
        cx.tape.group_norm(x, group_count(self.channels), Self::EPS_GROUP, &g, &b)
    }

    pub fn layer<T: Float>(&self, cx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let (g, b) = self.affine(cx)?;
        cx.tape.layer_norm(x, Self::EPS_LAYER, &g, &b)
    }
}

/// `[N, C, H, W]` → `[N, H·W, C]`.
pub fn to_tokens<T: Float>(tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
    let s = x.shape().to_vec();
    let flat = tape.reshape(x, &[s[0], s[1], s[2] * s[3]])?;
    tape.permute(&flat, &[0, 2, 1])
}

/// `[N, H·W, C]` → `[N, C, H, W]`.
pub fn to_spatial<T: Float>(tape: &Tape<T>, tokens: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
    let s = tokens.shape().to_vec();
    let t = tape.permute(tokens, &[0, 2, 1])?;
    tape.reshape(&t, &[s[0], s[2], h, w])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_rule() {
        assert_eq!(group_count(64), 32);
        assert_eq!(group_count(96), 32);
        assert_eq!(group_count(16), 16);
        assert_eq!(group_count(48), 24);
        assert_eq!(group_count(3), 3);
    }

    #[test]
    fn conv_param_count() {
        let mut store = ParamStore::<f32>::new();
        Conv2d::same("c", 8, 16, 3).init(&mut ParamInit::new(&mut store, 0));
        assert_eq!(store.param_count(), 1168);
    }

    #[test]
    fn token_layout_round_trip() {
        let tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..2 * 3 * 4 * 5).map(|i| i as f64).collect();
        let x = tape.leaf(Tensor::new(&[2, 3, 4, 5], data.clone()).unwrap());
        let t = to_tokens(&tape, &x).unwrap();
        assert_eq!(t.shape(), &[2, 20, 3]);
        // token (y=1, x=2) of sample 1, channel 2
        assert_eq!(t.value().data()[(20 + 7) * 3 + 2], x.value().at4(1, 2, 1, 2));
        let back = to_spatial(&tape, &t, 4, 5).unwrap();
        assert_eq!(back.data(), &data[..]);
    }
}

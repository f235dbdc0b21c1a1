use super::layers::{to_spatial, to_tokens, Conv2d, Ctx, Linear, Norm, ParamInit};
use crate::error::{Error, Result};
use crate::tensor::{Float, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub embed_dim: usize,
    pub heads: usize,
    /// Keys and values are pooled to `pool_size × pool_size` before attention.
    pub pool_size: usize,
}

impl AttentionConfig {
    pub fn new(embed_dim: usize, heads: usize, pool_size: usize) -> Result<Self> {
        if heads == 0 || embed_dim % heads != 0 {
            return Err(Error::arg("attention", format!("embed_dim {embed_dim} not divisible by {heads} heads")));
        }
        if pool_size == 0 {
            return Err(Error::arg("attention", "pool_size must be at least 1"));
        }
        Ok(AttentionConfig { embed_dim, heads, pool_size })
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

fn check_tokens<T: Float>(op: &'static str, tokens: &Var<T>, h: usize, w: usize, d: usize) -> Result<()> {
    let s = tokens.shape();
    if s.len() != 3 || s[1] != h * w || s[2] != d {
        return Err(Error::shape(op, format!("tokens {s:?} do not match [N, {h}·{w}, {d}]")));
    }
    Ok(())
}

/// Linear spatial-reduction attention: queries from every token, keys and
/// values from the token map average-pooled to a fixed grid.
#[derive(Debug, Clone)]
pub struct LinearSra {
    pub cfg: AttentionConfig,
    q: Linear,
    sr: Conv2d,
    norm: Norm,
    k: Linear,
    v: Linear,
    proj: Linear,
}

impl LinearSra {
    pub fn new(prefix: &str, cfg: AttentionConfig) -> Self {
        let d = cfg.embed_dim;
        LinearSra {
            cfg,
            q: Linear::new(format!("{prefix}.q"), d, d),
            sr: Conv2d::pointwise(format!("{prefix}.sr"), d, d),
            norm: Norm::new(format!("{prefix}.sr_norm"), d),
            // A key bias shifts every score in a row equally and cancels in
            // the softmax.
            k: Linear::without_bias(format!("{prefix}.k"), d, d),
            v: Linear::new(format!("{prefix}.v"), d, d),
            proj: Linear::new(format!("{prefix}.proj"), d, d),
        }
    }

    pub fn init<T: Float>(&self, pi: &mut ParamInit<T>) {
        self.q.init(pi);
        self.sr.init(pi);
        self.norm.init(pi);
        self.k.init(pi);
        self.v.init(pi);
        self.proj.init(pi);
    }

    /// `[N, L, D]` → `[N·heads, L, head_dim]`.
    fn split_heads<T: Float>(&self, cx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let (n, l) = (x.shape()[0], x.shape()[1]);
        let (h, hd) = (self.cfg.heads, self.cfg.head_dim());
        let t = cx.tape.reshape(x, &[n, l, h, hd])?;
        let t = cx.tape.permute(&t, &[0, 2, 1, 3])?;
        cx.tape.reshape(&t, &[n * h, l, hd])
    }

    /// Pooled key/value tokens `[N, P², D]` after projection, norm and SiLU.
    pub fn reduced_tokens<T: Float>(&self, cx: &Ctx<T>, tokens: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
        let t = cx.tape;
        let spatial = to_spatial(t, tokens, h, w)?;
        let pooled = t.adaptive_avg_pool2d(&spatial, self.cfg.pool_size, self.cfg.pool_size)?;
        let reduced = to_tokens(t, &self.sr.forward(cx, &pooled)?)?;
        Ok(t.silu(&self.norm.layer(cx, &reduced)?))
    }

    /// Returns the block output and the attention weights `[N·heads, L, P²]`.
    pub fn forward_with_weights<T: Float>(
        &self,
        cx: &Ctx<T>,
        tokens: &Var<T>,
        h: usize,
        w: usize,
    ) -> Result<(Var<T>, Var<T>)> {
        check_tokens("linear_sra_attention", tokens, h, w, self.cfg.embed_dim)?;
        let t = cx.tape;
        let (n, l, d) = (tokens.shape()[0], h * w, self.cfg.embed_dim);
        let q = self.split_heads(cx, &self.q.forward(cx, tokens)?)?;
        let kv = self.reduced_tokens(cx, tokens, h, w)?;
        let k = self.split_heads(cx, &self.k.forward(cx, &kv)?)?;
        let v = self.split_heads(cx, &self.v.forward(cx, &kv)?)?;
        let scores = t.scale(&t.matmul(&q, &k, true)?, 1.0 / (self.cfg.head_dim() as f64).sqrt());
        let weights = t.softmax_lastdim(&scores)?;
        let ctx = t.matmul(&weights, &v, false)?;
        let ctx = t.reshape(&ctx, &[n, self.cfg.heads, l, self.cfg.head_dim()])?;
        let ctx = t.permute(&ctx, &[0, 2, 1, 3])?;
        let ctx = t.reshape(&ctx, &[n, l, d])?;
        Ok((self.proj.forward(cx, &ctx)?, weights))
    }

    pub fn forward<T: Float>(&self, cx: &Ctx<T>, tokens: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
        Ok(self.forward_with_weights(cx, tokens, h, w)?.0)
    }

    pub fn value_proj(&self) -> &Linear {
        &self.v
    }

    pub fn out_proj(&self) -> &Linear {
        &self.proj
    }
}

/// Token feed-forward block whose zero-padded 3×3 depthwise convolution
/// supplies positional information.
#[derive(Debug, Clone)]
pub struct MixFfn {
    fc1: Linear,
    dw: Conv2d,
    fc2: Linear,
}

impl MixFfn {
    pub fn new(prefix: &str, dim: usize, expansion: usize) -> Self {
        let hidden = dim * expansion;
        MixFfn {
            fc1: Linear::new(format!("{prefix}.fc1"), dim, hidden),
            dw: Conv2d::depthwise(format!("{prefix}.dw"), hidden),
            fc2: Linear::new(format!("{prefix}.fc2"), hidden, dim),
        }
    }

    pub fn init<T: Float>(&self, pi: &mut ParamInit<T>) {
        self.fc1.init(pi);
        self.dw.init(pi);
        self.fc2.init(pi);
    }

    /// Activated depthwise-conv output `[N, e·D, H, W]`, before the final projection.
    pub fn spatial_activations<T: Float>(&self, cx: &Ctx<T>, tokens: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
        check_tokens("mix_ffn", tokens, h, w, self.fc1.din)?;
        let hidden = self.fc1.forward(cx, tokens)?;
        let spatial = to_spatial(cx.tape, &hidden, h, w)?;
        Ok(cx.tape.silu(&self.dw.forward(cx, &spatial)?))
    }

    pub fn forward<T: Float>(&self, cx: &Ctx<T>, tokens: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
        let act = self.spatial_activations(cx, tokens, h, w)?;
        self.fc2.forward(cx, &to_tokens(cx.tape, &act)?)
    }
}

/// `x + attn(ln1(x))`, then `x + ffn(ln2(x))`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    norm1: Norm,
    pub attn: LinearSra,
    norm2: Norm,
    pub ffn: MixFfn,
}

impl TransformerBlock {
    pub fn new(prefix: &str, cfg: AttentionConfig, expansion: usize) -> Self {
        let d = cfg.embed_dim;
        TransformerBlock {
            norm1: Norm::new(format!("{prefix}.norm1"), d),
            attn: LinearSra::new(&format!("{prefix}.attn"), cfg),
            norm2: Norm::new(format!("{prefix}.norm2"), d),
            ffn: MixFfn::new(&format!("{prefix}.ffn"), d, expansion),
        }
    }

    pub fn init<T: Float>(&self, pi: &mut ParamInit<T>) {
        self.norm1.init(pi);
        self.attn.init(pi);
        self.norm2.init(pi);
        self.ffn.init(pi);
    }

    pub fn forward<T: Float>(&self, cx: &Ctx<T>, x: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
        let a = self.attn.forward(cx, &self.norm1.layer(cx, x)?, h, w)?;
        let x = cx.tape.add(x, &a)?;
        let f = self.ffn.forward(cx, &self.norm2.layer(cx, &x)?, h, w)?;
        cx.tape.add(&x, &f)
    }
}

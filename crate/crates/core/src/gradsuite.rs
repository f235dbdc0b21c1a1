//! The f64 finite-difference suite over every differentiable op, every
//! network block, and the two toy end-to-end models.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::synthetic::{generate, BlobShape};
use crate::data::collate;
use crate::error::{Error, Result};
use crate::model::{Architecture, Model, ModelConfig, PredictionHead};
use crate::nn::{
    AttentionConfig, Ctx, LinearSra, LocalEmphasis, MixFfn, OverlapPatchEmbed, ParamInit, ResidualBlock,
    StepwiseAggregate, TransformerBlock, PLD_WIDTH,
};
use crate::tensor::gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
use crate::tensor::{resize_chw, Conv2dOptions, GradFault, ParamStore, ResampleMode, Tape, Tensor, Var};
use crate::train::bce_dice_loss;

pub const BLOCK_THRESHOLD: f64 = 1e-4;
pub const END_TO_END_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Op,
    Block,
    EndToEnd,
}

impl Tier {
    pub fn threshold(self) -> f64 {
        match self {
            Tier::Op | Tier::Block => BLOCK_THRESHOLD,
            Tier::EndToEnd => END_TO_END_THRESHOLD,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Tier::Op => "op",
            Tier::Block => "block",
            Tier::EndToEnd => "end-to-end",
        }
    }
}

pub const COMPONENTS: &[(&str, Tier)] = &[
    ("conv2d", Tier::Op),
    ("conv2d_strided_grouped", Tier::Op),
    ("group_norm", Tier::Op),
    ("layer_norm", Tier::Op),
    ("silu", Tier::Op),
    ("sigmoid", Tier::Op),
    ("softmax", Tier::Op),
    ("linear", Tier::Op),
    ("matmul", Tier::Op),
    ("interpolate2d_bilinear", Tier::Op),
    ("interpolate2d_antialias", Tier::Op),
    ("adaptive_avg_pool2d", Tier::Op),
    ("bce_dice_loss", Tier::Op),
    ("residual_block", Tier::Block),
    ("residual_block_projection", Tier::Block),
    ("overlap_patch_embed", Tier::Block),
    ("linear_sra_attention", Tier::Block),
    ("mix_ffn", Tier::Block),
    ("transformer_block", Tier::Block),
    ("local_emphasis", Tier::Block),
    ("stepwise_aggregate", Tier::Block),
    ("prediction_head", Tier::Block),
    ("fcbformer_toy", Tier::EndToEnd),
    ("ssformer_i_toy", Tier::EndToEnd),
];

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    /// Architecture for the end-to-end rows, evaluated at 32×32.
    pub model: ModelConfig,
    pub seed: u64,
    pub fault: Option<GradFault>,
    /// Coordinates sampled per tensor in the end-to-end models. Every tensor
    /// additionally gets a random-direction probe.
    pub end_to_end_coords: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { model: ModelConfig::toy_64(), seed: 0, fault: None, end_to_end_coords: 2 }
    }
}

#[derive(Debug, Clone)]
pub struct ComponentResult {
    pub component: String,
    pub tier: Tier,
    pub threshold: f64,
    pub max_rel_err: f64,
    pub worst_tensor: String,
    pub tensors: usize,
    pub coords: usize,
    pub seconds: f64,
}

impl ComponentResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.threshold
    }
}

fn tier_of(name: &str) -> Result<Tier> {
    COMPONENTS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|&(_, t)| t)
        .ok_or_else(|| Error::Config(format!("unknown gradcheck component `{name}`")))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("shape and buffer agree")
}

/// `Σ y ⊙ r` for a fixed random `r`, so no output coordinate is symmetric.
fn probe<'a>(seed: u64) -> impl Fn(&Tape<f64>, &Var<f64>) -> Result<Var<f64>> + 'a {
    move |t, y| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let r = t.constant(uniform(&mut rng, y.shape(), -1.0, 1.0));
        Ok(t.sum(&t.mul(y, &r)?))
    }
}

/// Initializes with the model's scheme, then jitters every tensor so that
/// norm affines and biases are not at their special starting values.
fn block_params(seed: u64, init: impl FnOnce(&mut ParamInit<f64>)) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    init(&mut ParamInit::new(&mut store, seed));
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let t = store.get_mut(&name).expect("listed");
        for v in t.data_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    store
}

fn insert_input(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, name: &str, shape: &[usize]) {
    store.insert(name, uniform(rng, shape, -1.0, 1.0));
}

fn check(
    store: &ParamStore<f64>,
    opts: &SuiteOptions,
    gc: GradcheckOptions,
    f: impl Fn(&Tape<f64>, &ParamStore<f64>) -> Result<Var<f64>>,
) -> Result<GradcheckReport> {
    gradcheck(store, f, &GradcheckOptions { seed: opts.seed, fault: opts.fault.clone(), ..gc })
}

fn run_op(name: &str, opts: &SuiteOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut s = ParamStore::new();
    let out = probe(opts.seed);
    let gc = GradcheckOptions::default();
    match name {
        "conv2d" => {
            insert_input(&mut s, &mut rng, "x", &[2, 3, 8, 8]);
            insert_input(&mut s, &mut rng, "w", &[4, 3, 3, 3]);
            insert_input(&mut s, &mut rng, "b", &[4]);
            check(&s, opts, gc, |t, p| {
                let y = t.conv2d(&t.param(p, "x")?, &t.param(p, "w")?, Some(&t.param(p, "b")?), Conv2dOptions::new(1, 1))?;
                out(t, &y)
            })
        }
        "conv2d_strided_grouped" => {
            insert_input(&mut s, &mut rng, "x", &[1, 4, 7, 7]);
            insert_input(&mut s, &mut rng, "w", &[6, 2, 3, 3]);
            check(&s, opts, gc, |t, p| {
                let y = t.conv2d(&t.param(p, "x")?, &t.param(p, "w")?, None, Conv2dOptions::new(2, 1).groups(2))?;
                out(t, &y)
            })
        }
        "group_norm" => {
            insert_input(&mut s, &mut rng, "x", &[2, 4, 3, 3]);
            s.insert("g", uniform(&mut rng, &[4], 0.5, 1.5));
            insert_input(&mut s, &mut rng, "b", &[4]);
            check(&s, opts, gc, |t, p| {
                let y = t.group_norm(&t.param(p, "x")?, 2, 1e-5, &t.param(p, "g")?, &t.param(p, "b")?)?;
                out(t, &y)
            })
        }
        "layer_norm" => {
            insert_input(&mut s, &mut rng, "x", &[2, 5, 6]);
            s.insert("g", uniform(&mut rng, &[6], 0.5, 1.5));
            insert_input(&mut s, &mut rng, "b", &[6]);
            check(&s, opts, gc, |t, p| {
                let y = t.layer_norm(&t.param(p, "x")?, 1e-6, &t.param(p, "g")?, &t.param(p, "b")?)?;
                out(t, &y)
            })
        }
        "silu" | "sigmoid" => {
            s.insert("x", uniform(&mut rng, &[2, 4, 8, 8], -4.0, 4.0));
            let silu = name == "silu";
            check(&s, opts, gc, move |t, p| {
                let x = t.param(p, "x")?;
                out(t, &if silu { t.silu(&x) } else { t.sigmoid(&x) })
            })
        }
        "softmax" => {
            s.insert("x", uniform(&mut rng, &[3, 4, 7], -3.0, 3.0));
            check(&s, opts, gc, |t, p| out(t, &t.softmax_lastdim(&t.param(p, "x")?)?))
        }
        "linear" => {
            insert_input(&mut s, &mut rng, "x", &[2, 5, 6]);
            insert_input(&mut s, &mut rng, "w", &[4, 6]);
            insert_input(&mut s, &mut rng, "b", &[4]);
            check(&s, opts, gc, |t, p| {
                let y = t.linear(&t.param(p, "x")?, &t.param(p, "w")?, Some(&t.param(p, "b")?))?;
                out(t, &y)
            })
        }
        "matmul" => {
            insert_input(&mut s, &mut rng, "a", &[2, 3, 5]);
            insert_input(&mut s, &mut rng, "b", &[2, 5, 4]);
            insert_input(&mut s, &mut rng, "c", &[2, 4, 5]);
            check(&s, opts, gc, |t, p| {
                let a = t.param(p, "a")?;
                let ab = t.matmul(&a, &t.param(p, "b")?, false)?;
                let ac = t.matmul(&a, &t.param(p, "c")?, true)?;
                out(t, &t.add(&ab, &ac)?)
            })
        }
        "interpolate2d_bilinear" => {
            insert_input(&mut s, &mut rng, "x", &[2, 3, 4, 5]);
            check(&s, opts, gc, |t, p| {
                let y = t.interpolate2d(&t.param(p, "x")?, 7, 9, ResampleMode::Bilinear, false)?;
                out(t, &y)
            })
        }
        "interpolate2d_antialias" => {
            insert_input(&mut s, &mut rng, "x", &[1, 2, 8, 8]);
            check(&s, opts, gc, |t, p| {
                let y = t.interpolate2d(&t.param(p, "x")?, 3, 4, ResampleMode::Bilinear, true)?;
                out(t, &y)
            })
        }
        "adaptive_avg_pool2d" => {
            insert_input(&mut s, &mut rng, "x", &[2, 3, 8, 7]);
            check(&s, opts, gc, |t, p| out(t, &t.adaptive_avg_pool2d(&t.param(p, "x")?, 3, 3)?))
        }
        "bce_dice_loss" => {
            s.insert("z", uniform(&mut rng, &[2, 1, 4, 4], -3.0, 3.0));
            let target = uniform(&mut rng, &[2, 1, 4, 4], 0.0, 1.0);
            check(&s, opts, gc, move |t, p| bce_dice_loss(t, &t.param(p, "z")?, &target))
        }
        other => Err(Error::Config(format!("`{other}` is not an op component"))),
    }
}

fn run_block(name: &str, opts: &SuiteOptions) -> Result<GradcheckReport> {
    let seed = opts.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(7));
    let out = probe(seed);
    let gc = GradcheckOptions::default();
    match name {
        // Widths above 32 keep two channels per norm group, so no bias is
        // exactly cancelled by the following normalization.
        "residual_block" | "residual_block_projection" => {
            let (cin, cout) = if name == "residual_block" { (40, 40) } else { (40, 48) };
            let rb = ResidualBlock::new("rb", cin, cout);
            let mut s = block_params(seed, |pi| rb.init(pi));
            insert_input(&mut s, &mut rng, "x", &[2, cin, 4, 4]);
            check(&s, opts, gc, |t, p| out(t, &rb.forward(&Ctx::new(t, p), &t.param(p, "x")?)?))
        }
        "overlap_patch_embed" => {
            let pe = OverlapPatchEmbed::new("pe", 3, 8, 3, 2)?;
            let mut s = block_params(seed, |pi| pe.init(pi));
            insert_input(&mut s, &mut rng, "x", &[2, 3, 8, 8]);
            check(&s, opts, gc, |t, p| out(t, &pe.forward(&Ctx::new(t, p), &t.param(p, "x")?)?.0))
        }
        "linear_sra_attention" => {
            let sra = LinearSra::new("sra", AttentionConfig::new(8, 2, 2)?);
            let mut s = block_params(seed, |pi| sra.init(pi));
            insert_input(&mut s, &mut rng, "x", &[2, 16, 8]);
            check(&s, opts, gc, |t, p| out(t, &sra.forward(&Ctx::new(t, p), &t.param(p, "x")?, 4, 4)?))
        }
        "mix_ffn" => {
            let ffn = MixFfn::new("ffn", 8, 4);
            let mut s = block_params(seed, |pi| ffn.init(pi));
            insert_input(&mut s, &mut rng, "x", &[2, 16, 8]);
            check(&s, opts, gc, |t, p| out(t, &ffn.forward(&Ctx::new(t, p), &t.param(p, "x")?, 4, 4)?))
        }
        "transformer_block" => {
            let blk = TransformerBlock::new("blk", AttentionConfig::new(8, 2, 2)?, 2);
            let mut s = block_params(seed, |pi| blk.init(pi));
            insert_input(&mut s, &mut rng, "x", &[1, 16, 8]);
            check(&s, opts, gc, |t, p| out(t, &blk.forward(&Ctx::new(t, p), &t.param(p, "x")?, 4, 4)?))
        }
        "local_emphasis" => {
            let le = LocalEmphasis::new("le", 8);
            let mut s = block_params(seed, |pi| le.init(pi));
            insert_input(&mut s, &mut rng, "x", &[1, 8, 2, 2]);
            check(&s, opts, gc, |t, p| out(t, &le.forward(&Ctx::new(t, p), &t.param(p, "x")?, (4, 4))?))
        }
        "stepwise_aggregate" => {
            let sfa = StepwiseAggregate::new("sfa");
            let mut s = block_params(seed, |pi| sfa.init(pi));
            for i in 0..4 {
                insert_input(&mut s, &mut rng, &format!("le{i}"), &[1, PLD_WIDTH, 3, 3]);
            }
            check(&s, opts, gc, |t, p| {
                let les = (0..4).map(|i| t.param(p, &format!("le{i}"))).collect::<Result<Vec<_>>>()?;
                out(t, &sfa.forward(&Ctx::new(t, p), &les)?)
            })
        }
        "prediction_head" => {
            let ph = PredictionHead::new("ph", PLD_WIDTH, 32, 64);
            let mut s = block_params(seed, |pi| ph.init(pi));
            insert_input(&mut s, &mut rng, "tb", &[1, PLD_WIDTH, 2, 2]);
            insert_input(&mut s, &mut rng, "fcb", &[1, 32, 8, 8]);
            check(&s, opts, gc, |t, p| {
                let y = ph.forward(&Ctx::new(t, p), &t.param(p, "tb")?, &t.param(p, "fcb")?)?;
                out(t, &y)
            })
        }
        other => Err(Error::Config(format!("`{other}` is not a block component"))),
    }
}

/// The configured model at 32×32 with the training loss against a synthetic blob mask.
fn run_end_to_end(name: &str, opts: &SuiteOptions) -> Result<GradcheckReport> {
    let arch = match name {
        "fcbformer_toy" => Architecture::Fcbformer,
        "ssformer_i_toy" => Architecture::SsformerI,
        other => return Err(Error::Config(format!("`{other}` is not an end-to-end component"))),
    };
    let cfg = opts.model.clone().with_input_hw(32, 32).with_architecture(arch);
    let model = Model::new(&cfg)?;
    let params = model.init_params::<f64>(opts.seed);
    let pair = generate(1, 32, opts.seed, BlobShape::Circle);
    let (x, y) = collate(&[&pair[0]])?;
    let x = x.cast::<f64>();
    let (oh, ow) = model.output_hw();
    let target = resize_chw(&y.index_first(0).cast::<f64>(), oh, ow, true).reshape(&[1, 1, oh, ow])?;
    let gc = GradcheckOptions {
        eps: 1e-4,
        coords_per_tensor: opts.end_to_end_coords,
        directional: true,
        ..Default::default()
    };
    check(&params, opts, gc, |t, p| {
        let logits = model.forward(&Ctx::new(t, p), &t.constant(x.clone()))?;
        bce_dice_loss(t, &logits, &target)
    })
}

pub fn run_component(name: &str, opts: &SuiteOptions) -> Result<ComponentResult> {
    let tier = tier_of(name)?;
    let start = Instant::now();
    let report = match tier {
        Tier::Op => run_op(name, opts)?,
        Tier::Block => run_block(name, opts)?,
        Tier::EndToEnd => run_end_to_end(name, opts)?,
    };
    let worst_tensor = report.worst().map(|w| w.name.clone()).unwrap_or_default();
    Ok(ComponentResult {
        component: name.to_string(),
        tier,
        threshold: tier.threshold(),
        max_rel_err: report.max_rel_err,
        worst_tensor,
        tensors: report.tensors.len(),
        coords: report.coords(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// `only` (or every component when empty), in listing order.
pub fn select(only: &[String]) -> Result<Vec<&'static str>> {
    for name in only {
        tier_of(name)?;
    }
    Ok(COMPONENTS
        .iter()
        .filter(|(n, _)| only.is_empty() || only.iter().any(|o| o == n))
        .map(|&(n, _)| n)
        .collect())
}

pub fn run_suite(only: &[String], opts: &SuiteOptions) -> Result<Vec<ComponentResult>> {
    select(only)?.into_iter().map(|n| run_component(n, opts)).collect()
}

//! Loss, AdamW, plateau schedule, checkpoints and the epoch loop.

mod checkpoint;
mod optim;
mod scheduler;

pub use checkpoint::{Checkpoint, CheckpointHeader, OptimizerState, TensorEntry, MAGIC, VERSION};
pub use optim::{AdamW, AdamWConfig};
pub use scheduler::PlateauScheduler;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{augment_pair, collate, resize_pair, AugmentConfig, MaskPolicy, RngStream, SamplePair};
use crate::error::{Error, Result};
use crate::eval::{evaluate_split, ModelPredictor};
use crate::model::Model;
use crate::nn::Ctx;
use crate::tensor::{resize_chw, Float, ParamStore, Tape, Tensor, Var};

pub const DICE_SMOOTH: f64 = 1.0;

/// Mean BCE on logits plus `1 − soft Dice` pooled over the batch.
pub fn bce_dice_loss<T: Float>(tape: &Tape<T>, logits: &Var<T>, target: &Tensor<T>) -> Result<Var<T>> {
    let bce = tape.bce_with_logits(logits, target)?;
    let dice = tape.soft_dice_loss(logits, target, DICE_SMOOTH)?;
    tape.add(&bce, &dice)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    /// `None` trains on the resized samples as-is.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 16,
            optimizer: AdamWConfig::default(),
            seed: 0,
            augment: Some(AugmentConfig::default()),
        }
    }
}

/// Owns the parameters and optimizer state for one model.
pub struct Trainer<'a> {
    pub model: &'a Model,
    pub params: ParamStore<f32>,
    pub opt: AdamW<f32>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a Model, params: ParamStore<f32>, opt: AdamWConfig) -> Self {
        Trainer { model, params, opt: AdamW::new(opt) }
    }

    /// Masks are resized (soft, anti-aliased) to the model's output size.
    pub fn targets(&self, masks: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (h, w) = self.model.output_hw();
        if (masks.shape()[2], masks.shape()[3]) == (h, w) {
            return Ok(masks.clone());
        }
        let items: Vec<Tensor<f32>> =
            (0..masks.shape()[0]).map(|i| resize_chw(&masks.index_first(i), h, w, true)).collect();
        Tensor::stack(&items)
    }

    /// One forward/backward/update on a normalized batch; returns the loss.
    pub fn train_step(&mut self, images: &Tensor<f32>, masks: &Tensor<f32>) -> Result<f64> {
        let target = self.targets(masks)?;
        let tape = Tape::new();
        let cx = Ctx::new(&tape, &self.params);
        let x = tape.constant(images.clone());
        let logits = self.model.forward(&cx, &x)?;
        let loss = bce_dice_loss(&tape, &logits, &target)?;
        let value = loss.data()[0] as f64;
        if !value.is_finite() {
            let op = tape.first_nonfinite().unwrap_or("loss").to_string();
            return Err(Error::NonFinite { op });
        }
        self.params.zero_grad();
        tape.backward_into(&loss, &mut self.params)?;
        self.opt.step(&mut self.params)?;
        Ok(value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mdice: f64,
    pub lr: f64,
}

pub struct FitOutcome {
    pub log: Vec<EpochLog>,
    /// Parameters at the epoch with the best validation mDice.
    pub best: Checkpoint,
    pub last_params: ParamStore<f32>,
}

pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Trains for `cfg.epochs`, checkpointing whenever validation mDice strictly
/// improves. With `out_dir`, writes `best.ckpt` and `train_log.csv` as it goes.
pub fn fit(
    model: &Model,
    params: ParamStore<f32>,
    train: &[SamplePair],
    val: &[SamplePair],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<FitOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training needs non-empty train and validation sets".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let hw = model.config().input_hw;
    let train: Vec<SamplePair> = train.iter().map(|s| resize_pair(s, hw, MaskPolicy::Soft)).collect();
    let mut trainer = Trainer::new(model, params, cfg.optimizer);
    let mut sched = PlateauScheduler::new(cfg.optimizer.lr);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best = Checkpoint::new(model.config().clone(), trainer.params.clone(), cfg.seed);
    best.val_mdice = f64::NEG_INFINITY;
    let root = RngStream::new(cfg.seed);
    for epoch in 0..cfg.epochs {
        let lr = sched.lr;
        trainer.opt.set_lr(lr);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut root.tagged("shuffle").child(epoch as u64).rng());
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<SamplePair> = chunk
                .iter()
                .map(|&i| match &cfg.augment {
                    Some(a) => augment_pair(&train[i], a, &RngStream::for_sample(cfg.seed, epoch as u64, i as u64, "augment")),
                    None => train[i].clone(),
                })
                .collect();
            let (x, y) = collate(&batch.iter().collect::<Vec<_>>())?;
            loss_sum += trainer.train_step(&x, &y)?;
            batches += 1;
        }
        let val_mdice = evaluate_split(&ModelPredictor::new(model, &trainer.params), val, "val")?.mdice();
        if val_mdice > best.val_mdice {
            best = Checkpoint::new(model.config().clone(), trainer.params.clone(), cfg.seed)
                .with_optimizer(&trainer.opt, false);
            best.epoch = epoch;
            best.val_mdice = val_mdice;
            if let Some(dir) = out_dir {
                best.save(&dir.join("best.ckpt"))?;
            }
        }
        sched.step(val_mdice);
        log.push(EpochLog { epoch, train_loss: loss_sum / batches as f64, val_mdice, lr });
        if let Some(dir) = out_dir {
            write_log(&dir.join("train_log.csv"), &log)?;
        }
    }
    Ok(FitOutcome { log, best, last_params: trainer.params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate, BlobShape};
    use crate::model::ModelConfig;

    #[test]
    fn saturated_prediction_has_near_zero_loss() {
        let tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::full(&[1, 1, 4, 4], 20.0));
        let loss = bce_dice_loss(&tape, &logits, &Tensor::ones(&[1, 1, 4, 4])).unwrap();
        assert!(loss.data()[0] <= 1e-6, "{}", loss.data()[0]);
    }

    #[test]
    fn single_pixel_closed_form() {
        let tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::zeros(&[1, 1, 1, 1]));
        let loss = bce_dice_loss(&tape, &logits, &Tensor::ones(&[1, 1, 1, 1])).unwrap();
        let want = std::f64::consts::LN_2 + (1.0 - 0.8);
        assert!((loss.data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        use crate::tensor::gradcheck::{gradcheck, GradcheckOptions};
        let mut p = ParamStore::new();
        p.insert("z", Tensor::from_f64(&[1, 1, 2, 2], &[0.3, -1.2, 2.0, 0.1]).unwrap());
        let target = Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 0.0, 0.6, 0.25]).unwrap();
        let r = gradcheck(&p, |t, p| bce_dice_loss(t, &t.param(p, "z")?, &target), &GradcheckOptions::default()).unwrap();
        assert!(r.max_rel_err <= 1e-6, "{}", r.max_rel_err);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        assert!(bce_dice_loss(&tape, &logits, &Tensor::zeros(&[1, 1, 2, 3])).is_err());
    }

    #[test]
    fn ssformer_targets_are_quarter_scale() {
        let cfg = ModelConfig::toy_64().with_architecture(crate::model::Architecture::SsformerI);
        let model = Model::new(&cfg).unwrap();
        let trainer = Trainer::new(&model, ParamStore::new(), AdamWConfig::default());
        let t = trainer.targets(&Tensor::ones(&[2, 1, 64, 64])).unwrap();
        assert_eq!(t.shape(), &[2, 1, 16, 16]);
        assert!(t.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn fit_writes_log_and_checkpoint() {
        let cfg = ModelConfig::toy_64().with_input_hw(32, 32);
        let model = Model::new(&cfg).unwrap();
        let data = generate(3, 32, 0, BlobShape::Circle);
        let dir = tempfile::tempdir().unwrap();
        let tc = TrainConfig { epochs: 2, batch_size: 2, seed: 1, ..Default::default() };
        let out = fit(&model, model.init_params(1), &data[..2], &data[2..], &tc, Some(dir.path())).unwrap();
        assert_eq!(out.log.len(), 2);
        let text = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
        assert!(text.starts_with("epoch,train_loss,val_mdice,lr\n"));
        let ck = Checkpoint::load(&dir.path().join("best.ckpt")).unwrap();
        assert_eq!(ck.epoch, out.best.epoch);
        assert!(out.log.iter().all(|r| r.train_loss.is_finite() && (0.0..=1.0).contains(&r.val_mdice)));
    }
}

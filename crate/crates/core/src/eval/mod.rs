//! Per-sample segmentation metrics, report files and the evaluation protocol.

use std::path::Path;

use serde::Serialize;

use crate::data::{normalize_image, resize_pair, MaskPolicy, SamplePair};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Float, ParamStore, Tensor};

pub const THRESHOLD: f64 = 0.5;

/// `1` where `p ≥ 0.5`, else `0`.
pub fn binarize<T: Float>(p: &Tensor<T>) -> Tensor<T> {
    let th = T::c(THRESHOLD);
    p.map(|v| if v >= th { T::one() } else { T::zero() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Pixel counts of binary `pred` against binary `target` (values ≥ 0.5 are
/// foreground).
pub fn confusion_counts<T: Float>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Confusion> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "confusion_counts",
            format!("pred {:?} vs target {:?}", pred.shape(), target.shape()),
        ));
    }
    let th = T::c(THRESHOLD);
    let mut c = Confusion::default();
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        match (p >= th, t >= th) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleMetrics {
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Dice, IoU, precision and recall. When prediction and target are both
/// empty every metric is 1; otherwise an undefined ratio is 0.
pub fn sample_metrics(c: &Confusion) -> SampleMetrics {
    if c.tp + c.fp + c.fn_ == 0 {
        return SampleMetrics { dice: 1.0, iou: 1.0, precision: 1.0, recall: 1.0 };
    }
    SampleMetrics {
        dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        iou: ratio(c.tp, c.tp + c.fp + c.fn_),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub id: String,
    #[serde(flatten)]
    pub metrics: SampleMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Conventions {
    pub threshold: f64,
    pub threshold_rule: &'static str,
    pub both_empty: f64,
    pub undefined_ratio: f64,
    pub averaging: &'static str,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            threshold: THRESHOLD,
            threshold_rule: "p >= threshold is foreground",
            both_empty: 1.0,
            undefined_ratio: 0.0,
            averaging: "per-sample then mean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub name: String,
    pub count: usize,
    pub mdice: f64,
    pub miou: f64,
    pub mprecision: f64,
    pub mrecall: f64,
    pub conventions: Conventions,
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub summary: MetricsSummary,
}

impl MetricsReport {
    /// Sorts rows by id and averages them.
    pub fn from_rows(name: impl Into<String>, mut rows: Vec<MetricsRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        let n = rows.len() as f64;
        let mean = |f: fn(&SampleMetrics) -> f64| rows.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
        let summary = MetricsSummary {
            name: name.into(),
            count: rows.len(),
            mdice: mean(|m| m.dice),
            miou: mean(|m| m.iou),
            mprecision: mean(|m| m.precision),
            mrecall: mean(|m| m.recall),
            conventions: Conventions::default(),
            metadata: serde_json::Map::new(),
        };
        Ok(MetricsReport { rows, summary })
    }

    pub fn mdice(&self) -> f64 {
        self.summary.mdice
    }

    /// `id,dice,iou,precision,recall`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "dice", "iou", "precision", "recall"])?;
        for r in &self.rows {
            let m = &r.metrics;
            w.write_record([
                r.id.clone(),
                m.dice.to_string(),
                m.iou.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.summary)? + "\n")?;
        Ok(())
    }

    /// One line with the four means.
    pub fn headline(&self) -> String {
        let s = &self.summary;
        format!(
            "{}: n={} mDice={:.4} mIoU={:.4} mPrec={:.4} mRec={:.4}",
            s.name, s.count, s.mdice, s.miou, s.mprecision, s.mrecall
        )
    }
}

/// Maps a normalized batch `[N, 3, h, w]` to foreground probabilities `[N, 1, h, w]`.
pub trait Predictor {
    fn input_hw(&self) -> (usize, usize);
    fn predict(&self, x: &Tensor<f32>) -> Result<Tensor<f32>>;
}

pub struct ModelPredictor<'a> {
    pub model: &'a Model,
    pub params: &'a ParamStore<f32>,
    pub ablate_fcb: bool,
}

impl<'a> ModelPredictor<'a> {
    pub fn new(model: &'a Model, params: &'a ParamStore<f32>) -> Self {
        ModelPredictor { model, params, ablate_fcb: false }
    }

    pub fn without_fcb(mut self) -> Self {
        self.ablate_fcb = true;
        self
    }
}

impl Predictor for ModelPredictor<'_> {
    fn input_hw(&self) -> (usize, usize) {
        self.model.config().input_hw
    }

    fn predict(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.model.predict_probs(self.params, x, self.ablate_fcb)
    }
}

/// Images are resized (anti-aliased) to the network size and normalized;
/// targets are resized bilinearly and binarized; predictions are binarized
/// at 0.5.
pub fn evaluate_split(pred: &dyn Predictor, samples: &[SamplePair], name: &str) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let hw = pred.input_hw();
    let mut rows = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(4) {
        let resized: Vec<SamplePair> = chunk.iter().map(|s| resize_pair(s, hw, MaskPolicy::Binarized)).collect();
        let images: Vec<Tensor<f32>> = resized.iter().map(|s| normalize_image(&s.image)).collect();
        let probs = pred.predict(&Tensor::stack(&images)?)?;
        let want = [resized.len(), 1, hw.0, hw.1];
        if probs.shape() != want {
            return Err(Error::shape("evaluate_split", format!("predictor returned {:?}, want {want:?}", probs.shape())));
        }
        for (i, s) in resized.iter().enumerate() {
            let p = binarize(&probs.index_first(i));
            let c = confusion_counts(&p, &s.mask)?;
            rows.push(MetricsRow { id: s.id.clone(), metrics: sample_metrics(&c) });
        }
    }
    MetricsReport::from_rows(name, rows)
}

/// Evaluates a model trained on dataset `train_name` over the whole of
/// dataset `test_name`.
pub fn generalisability_eval(
    pred: &dyn Predictor,
    train_name: &str,
    test_name: &str,
    full_dataset: &[SamplePair],
) -> Result<MetricsReport> {
    evaluate_split(pred, full_dataset, &format!("train:{train_name}→test:{test_name}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn binarize_boundary_and_idempotence() {
        let p = t(&[4], &[0.5, 0.0, 0.49999, 1.0]);
        let b = binarize(&p);
        assert_eq!(b.data(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(binarize(&b), b);
    }

    #[test]
    fn counts_contract() {
        let target = t(&[2, 3], &[1., 0., 1., 0., 0., 1.]);
        assert_eq!(confusion_counts(&target, &target).unwrap(), Confusion { tp: 3, fp: 0, fn_: 0, tn: 3 });
        let inv = target.map(|v| 1.0 - v);
        assert_eq!(confusion_counts(&inv, &target).unwrap(), Confusion { tp: 0, fp: 3, fn_: 3, tn: 0 });
        assert!(confusion_counts(&t(&[6], &[0.; 6]), &target).is_err());
    }

    #[test]
    fn metric_examples() {
        let m = sample_metrics(&Confusion { tp: 2, fp: 0, fn_: 2, tn: 5 });
        assert!((m.dice - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!((m.iou, m.precision, m.recall), (0.5, 1.0, 0.5));
        let both_empty = sample_metrics(&Confusion { tp: 0, fp: 0, fn_: 0, tn: 9 });
        assert_eq!(both_empty, SampleMetrics { dice: 1.0, iou: 1.0, precision: 1.0, recall: 1.0 });
        let empty_pred = sample_metrics(&Confusion { tp: 0, fp: 0, fn_: 4, tn: 5 });
        assert_eq!((empty_pred.precision, empty_pred.recall, empty_pred.dice), (0.0, 0.0, 0.0));
    }

    struct Oracle;
    impl Predictor for Oracle {
        fn input_hw(&self) -> (usize, usize) {
            (8, 8)
        }
        // images carry the mask in every channel
        fn predict(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
            let n = x.shape()[0];
            let data = (0..n).flat_map(|i| x.data()[i * 192..][..64].iter().map(|v| (v + 1.0) / 2.0)).collect();
            Tensor::new(&[n, 1, 8, 8], data)
        }
    }

    struct Constant(f32);
    impl Predictor for Constant {
        fn input_hw(&self) -> (usize, usize) {
            (8, 8)
        }
        fn predict(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
            Ok(Tensor::full(&[x.shape()[0], 1, 8, 8], self.0))
        }
    }

    fn samples() -> Vec<SamplePair> {
        (0..6)
            .map(|k| {
                let mask: Vec<f32> = (0..64).map(|i| ((i * (k + 3)) % 7 < 3) as u8 as f32).collect();
                let image = mask.repeat(3);
                SamplePair::new(format!("s{k}"), Tensor::new(&[3, 8, 8], image).unwrap(), Tensor::new(&[1, 8, 8], mask).unwrap())
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn perfect_predictor_scores_one() {
        let r = evaluate_split(&Oracle, &samples(), "oracle").unwrap();
        assert_eq!(r.summary.count, 6);
        assert_eq!(r.mdice(), 1.0);
        assert_eq!(r.summary.miou, 1.0);
    }

    #[test]
    fn half_probability_on_empty_targets_is_all_foreground() {
        let empty: Vec<SamplePair> = (0..3)
            .map(|k| SamplePair::new(format!("e{k}"), Tensor::zeros(&[3, 8, 8]), Tensor::zeros(&[1, 8, 8])).unwrap())
            .collect();
        let r = evaluate_split(&Constant(0.5), &empty, "half").unwrap();
        assert_eq!((r.summary.mprecision, r.summary.mdice, r.summary.mrecall), (0.0, 0.0, 0.0));
        let r = evaluate_split(&Constant(0.4999), &empty, "below").unwrap();
        assert_eq!(r.summary.mdice, 1.0);
    }

    #[test]
    fn report_files_and_means() {
        let r = evaluate_split(&Constant(0.7), &samples(), "c").unwrap();
        let mean = r.rows.iter().map(|x| x.metrics.dice).sum::<f64>() / 6.0;
        assert!((r.mdice() - mean).abs() < 1e-9);
        let dir = tempfile::tempdir().unwrap();
        r.write_csv(&dir.path().join("r.csv")).unwrap();
        r.write_json(&dir.path().join("r.json")).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert!(csv.starts_with("id,dice,iou,precision,recall\n"));
        assert_eq!(csv.lines().count(), 7);
        let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
        assert_eq!(json["conventions"]["both_empty"], 1.0);
        assert!(evaluate_split(&Constant(0.7), &[], "none").is_err());
    }

    #[test]
    fn generalisability_label_and_size() {
        let r = generalisability_eval(&Oracle, "A", "B", &samples()).unwrap();
        assert_eq!(r.summary.name, "train:A→test:B");
        assert_eq!(r.rows.len(), 6);
    }
}

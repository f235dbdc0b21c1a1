use super::elementwise::sigmoid;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

fn check_pair<T: Float>(op: &'static str, logits: &Var<T>, target: &Tensor<T>) -> Result<()> {
    if logits.shape() != target.shape() {
        return Err(Error::shape(
            op,
            format!("logits {:?} vs target {:?}", logits.shape(), target.shape()),
        ));
    }
    Ok(())
}

impl<T: Float> Tape<T> {
    /// Mean binary cross-entropy on logits, in the overflow-free form
    /// `max(z, 0) − z·t + ln(1 + e^{−|z|})`. Targets may be soft.
    pub fn bce_with_logits(&self, logits: &Var<T>, target: &Tensor<T>) -> Result<Var<T>> {
        check_pair("bce_with_logits", logits, target)?;
        let n = T::c(logits.value().numel() as f64);
        let total: T = logits
            .data()
            .iter()
            .zip(target.data())
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let (zv, tv) = (logits.arc(), target.clone());
        Ok(self.record(
            "bce_with_logits",
            &[logits],
            Tensor::scalar(total / n),
            Box::new(move |g, _| {
                let k = g[0] / n;
                let gz = zv
                    .data()
                    .iter()
                    .zip(tv.data())
                    .map(|(&z, &t)| k * (sigmoid(z) - t))
                    .collect();
                vec![Some(gz)]
            }),
        ))
    }

    /// `1 − (2·Σpt + s) / (Σp + Σt + s)` with `p = sigmoid(logits)`, pooled
    /// over every element.
    pub fn soft_dice_loss(&self, logits: &Var<T>, target: &Tensor<T>, smooth: f64) -> Result<Var<T>> {
        check_pair("soft_dice_loss", logits, target)?;
        let s = T::c(smooth);
        let probs: Vec<T> = logits.data().iter().map(|&z| sigmoid(z)).collect();
        let inter: T = probs.iter().zip(target.data()).map(|(&p, &t)| p * t).sum();
        let denom = probs.iter().copied().sum::<T>() + target.data().iter().copied().sum::<T>() + s;
        let numer = T::c(2.0) * inter + s;
        let tv = target.clone();
        Ok(self.record(
            "soft_dice_loss",
            &[logits],
            Tensor::scalar(T::one() - numer / denom),
            Box::new(move |g, _| {
                let d2 = denom * denom;
                let gz = probs
                    .iter()
                    .zip(tv.data())
                    .map(|(&p, &t)| {
                        let dp = -(T::c(2.0) * t * denom - numer) / d2;
                        g[0] * dp * p * (T::one() - p)
                    })
                    .collect();
                vec![Some(gz)]
            }),
        ))
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Float, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Adam with decoupled weight decay, applied to the weights before the
/// moment step.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    pub step: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

impl<T: Float> AdamW<T> {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW { cfg, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Updates every parameter from its accumulated gradient. Fails before
    /// touching anything if a gradient is missing.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if let Some((name, _)) = params.iter().find(|(_, p)| p.grad().is_none()) {
            return Err(Error::MissingGrad(name.to_string()));
        }
        self.step += 1;
        let c = self.cfg;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (lr, b1, b2, eps) = (T::c(c.lr), T::c(c.beta1), T::c(c.beta2), T::c(c.eps));
        let decay = T::one() - T::c(c.lr * c.weight_decay);
        let (bc1, bc2) = (T::c(bc1), T::c(bc2));
        for (name, p) in params.iter_mut() {
            let g = p.grad().expect("checked above").clone();
            let shape = g.shape().to_vec();
            let m = self.m.entry(name.to_string()).or_insert_with(|| Tensor::zeros(&shape));
            let v = self.v.entry(name.to_string()).or_insert_with(|| Tensor::zeros(&shape));
            let w = p.value_mut();
            for (((wi, &gi), mi), vi) in w
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *wi *= decay;
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *wi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Var};

    fn store_with_grads(w: &[f64], g: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (i, (&wi, &gi)) in w.iter().zip(g).enumerate() {
            s.insert(format!("p{i}"), Tensor::scalar(wi));
            let tape = Tape::new();
            let v: Var<f64> = tape.param(&s, &format!("p{i}")).unwrap();
            let root = tape.scale(&v, gi);
            tape.backward_into(&root, &mut s).unwrap();
        }
        s
    }

    #[test]
    fn first_step_closed_form() {
        let mut s = store_with_grads(&[1.0], &[1.0]);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut s).unwrap();
        let want = (1.0 - 1e-4 * 0.01) - 1e-4 * 1.0 / (1.0 + 1e-8);
        let got = s.get("p0").unwrap().data()[0];
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
        assert!((got - 0.999899).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut s = store_with_grads(&[0.3, -2.0], &[0.0, 0.0]);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() });
        for _ in 0..5 {
            opt.step(&mut s).unwrap();
        }
        assert_eq!(s.get("p0").unwrap().data()[0], 0.3);
        assert_eq!(s.get("p1").unwrap().data()[0], -2.0);
    }

    #[test]
    fn identical_parameters_evolve_identically() {
        let mut s = store_with_grads(&[0.7, 0.7], &[0.2, 0.2]);
        let mut opt = AdamW::new(AdamWConfig::default());
        for _ in 0..3 {
            opt.step(&mut s).unwrap();
        }
        assert_eq!(s.get("p0").unwrap().data(), s.get("p1").unwrap().data());
        assert_eq!(opt.step, 3);
    }

    #[test]
    fn missing_gradient_named() {
        let mut s = store_with_grads(&[1.0], &[1.0]);
        s.insert("late", Tensor::scalar(0.0));
        let mut opt = AdamW::new(AdamWConfig::default());
        match opt.step(&mut s) {
            Err(Error::MissingGrad(n)) => assert_eq!(n, "late"),
            other => panic!("{other:?}"),
        }
        assert_eq!(opt.step, 0);
        assert_eq!(s.get("p0").unwrap().data()[0], 1.0);
    }
}

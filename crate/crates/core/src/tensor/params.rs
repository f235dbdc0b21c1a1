use std::collections::BTreeMap;
use std::sync::Arc;

use super::{Float, Gradients, Tensor};
use crate::error::{Error, Result};

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    value: Arc<Tensor<T>>,
    grad: Option<Tensor<T>>,
}

impl<T: Float> Parameter<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.value)
    }

    pub fn grad(&self) -> Option<&Tensor<T>> {
        self.grad.as_ref()
    }
}

/// Named parameters keyed by dot-separated paths, iterated in lexicographic order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Parameter<T>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: BTreeMap::new() }
    }

    /// Inserts or replaces a parameter.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.params
            .insert(name.into(), Parameter { value: Arc::new(value), grad: None });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .map(|p| p.value.as_ref())
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .map(Parameter::value_mut)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub(crate) fn value_arc(&self, name: &str) -> Result<Arc<Tensor<T>>> {
        self.params
            .get(name)
            .map(|p| Arc::clone(&p.value))
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).and_then(|p| p.grad.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count over all stored tensors.
    pub fn param_count(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Scalar count over parameters whose name starts with `prefix`.
    pub fn param_count_under(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, p)| p.value.numel())
            .sum()
    }

    /// Adds gradients additively into the per-parameter slots.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (name, g) in grads.named() {
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::MissingParam(name.to_string()))?;
            match &mut p.grad {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, b)| *a += *b),
                slot @ None => *slot = Some(g.clone()),
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (k, p) in &self.params {
            out.insert(k.clone(), p.value.cast());
        }
        out
    }

    /// Keeps only the parameters whose name satisfies `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.params.retain(|k, _| keep(k));
    }
}

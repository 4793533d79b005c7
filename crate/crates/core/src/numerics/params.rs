use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};

/// One learnable tensor with its gradient accumulator and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    /// `None` until the first `zero_grad` or accumulation.
    pub grad: Option<Tensor>,
    pub m: Tensor,
    pub v: Tensor,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        Param {
            value,
            grad: None,
            m,
            v,
        }
    }
}

/// Named parameters, iterated in lexicographic name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), Param::new(value));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).and_then(|p| p.grad.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn bump_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad = Some(Tensor::zeros(p.value.shape()));
        }
    }

    /// Adds `scale * grad` into the accumulator of `name`.
    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor, scale: f64) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if grad.shape() != p.value.shape() {
            return Err(Error::shape(
                format!("gradient of `{name}`"),
                format!("{:?}", p.value.shape()),
                format!("{:?}", grad.shape()),
            ));
        }
        let acc = p.grad.get_or_insert_with(|| Tensor::zeros(grad.shape()));
        for (a, g) in acc.data_mut().iter_mut().zip(grad.data()) {
            *a += scale * g;
        }
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .filter_map(|p| p.grad.as_ref())
            .map(Tensor::sum_sq)
            .sum::<f64>()
            .sqrt()
    }

    pub fn value_norm(&self) -> f64 {
        self.params
            .values()
            .map(|p| p.value.sum_sq())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for p in self.params.values_mut() {
                if let Some(g) = p.grad.as_mut() {
                    g.scale_assign(s);
                }
            }
        }
        norm
    }

    /// Copies parameter values only; gradients and moments start fresh.
    pub fn values_only(&self) -> ParamStore {
        let mut out = ParamStore::new();
        for (k, p) in &self.params {
            out.insert(k.clone(), p.value.clone());
        }
        out
    }
}

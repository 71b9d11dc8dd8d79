//! Named parameter and buffer storage.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    /// Accumulated gradient; `None` until a backward pass reaches the parameter.
    pub grad: Option<Tensor<T>>,
    /// `false` for buffers such as batch-norm running statistics.
    pub trainable: bool,
}

/// Parameters and buffers keyed by dotted name, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) {
        self.entries.insert(name.into(), Param { value, grad: None, trainable });
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.entries.get(name).ok_or_else(|| Error::UnknownParam(name.into()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        self.entries.get_mut(name).ok_or_else(|| Error::UnknownParam(name.into()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.get(name)?.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Adds `grad` into the parameter's accumulator.
    pub fn accumulate_grad(&mut self, name: &str, grad: Tensor<T>) -> Result<()> {
        let p = self.get_mut(name)?;
        if grad.shape() != p.value.shape() {
            return Err(Error::shape(format!(
                "gradient for `{name}` has shape {} but parameter has {}",
                grad.shape(),
                p.value.shape()
            )));
        }
        match &mut p.grad {
            Some(acc) => acc.data_mut().iter_mut().zip(grad.data()).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(grad),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad = None;
        }
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.values().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| (k.clone(), Param { value: p.value.cast(), grad: p.grad.as_ref().map(Tensor::cast), trainable: p.trainable }))
                .collect(),
        }
    }
}

/// Uniform `[-bound, bound]` tensor with `bound = sqrt(1 / fan_in)`.
pub fn fan_in_uniform<T: Scalar, R: Rng>(shape: Shape, fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = fan_in_bound(fan_in);
    let data = (0..shape.numel()).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
    Tensor::from_vec(shape, data).expect("sized by construction")
}

pub fn fan_in_bound(fan_in: usize) -> f64 {
    (1.0 / fan_in.max(1) as f64).sqrt()
}

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam with per-parameter moment buffers keyed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor<T>>,
    second: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update to every trainable parameter, then clears all gradients.
    ///
    /// Fails without touching any parameter if a trainable one has no gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if let Some((name, _)) = params.iter().find(|(_, p)| p.trainable && p.grad.is_none()) {
            return Err(Error::MissingGrad(name.to_string()));
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let one = T::one();
        let bias1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let bias2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for (name, p) in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let grad = p.grad.take().expect("checked above");
            let shape = p.value.shape();
            let m = self.first.entry(name.to_string()).or_insert_with(|| Tensor::zeros(shape));
            let v = self.second.entry(name.to_string()).or_insert_with(|| Tensor::zeros(shape));
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m / bias1;
                let vhat = *v / bias2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        params.zero_grad();
        Ok(())
    }

    /// Moment buffers as `(name, first, second)`, for checkpointing.
    pub fn moments(&self) -> impl Iterator<Item = (&str, &Tensor<T>, &Tensor<T>)> {
        self.first.iter().filter_map(|(k, m)| self.second.get(k).map(|v| (k.as_str(), m, v)))
    }

    pub fn restore(config: AdamConfig, step: u64, moments: Vec<(String, Tensor<T>, Tensor<T>)>) -> Self {
        let mut s = Self::new(config);
        s.step = step;
        for (k, m, v) in moments {
            s.first.insert(k.clone(), m);
            s.second.insert(k, v);
        }
        s
    }
}

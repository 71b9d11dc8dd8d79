//! Per-channel batch normalization.

use crate::tensor::{Scalar, Shape};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Statistics a batch-norm forward pass used and, in train mode, observed.
#[derive(Clone, Debug)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    /// Unbiased batch variance per channel (train mode only), for the running estimate.
    pub batch_var: Option<Vec<T>>,
}

fn channel_iter<T: Scalar>(x: &[T], s: Shape, c: usize) -> impl Iterator<Item = &T> {
    let p = s.plane();
    (0..s.n).flat_map(move |n| {
        let start = (n * s.c + c) * p;
        x[start..start + p].iter()
    })
}

pub(crate) fn forward<T: Scalar>(
    x: &[T],
    s: Shape,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    mode: Mode,
) -> (Vec<T>, BnStats<T>) {
    let eps = T::lit(BN_EPS);
    let count = s.n * s.plane();
    let m = T::from_usize(count.max(1)).unwrap();
    let (mean, var, batch_var) = match mode {
        Mode::Train => {
            let mut mean = Vec::with_capacity(s.c);
            let mut var = Vec::with_capacity(s.c);
            let mut unbiased = Vec::with_capacity(s.c);
            for c in 0..s.c {
                let mu = channel_iter(x, s, c).copied().sum::<T>() / m;
                let ss = channel_iter(x, s, c).map(|&v| (v - mu) * (v - mu)).sum::<T>();
                mean.push(mu);
                var.push(ss / m);
                unbiased.push(if count > 1 { ss / T::from_usize(count - 1).unwrap() } else { T::zero() });
            }
            (mean, var, Some(unbiased))
        }
        Mode::Eval => (running_mean.to_vec(), running_var.to_vec(), None),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut out = vec![T::zero(); x.len()];
    let p = s.plane();
    for n in 0..s.n {
        for c in 0..s.c {
            let start = (n * s.c + c) * p;
            let (mu, is, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
            for (o, &v) in out[start..start + p].iter_mut().zip(&x[start..start + p]) {
                *o = (v - mu) * is * g + b;
            }
        }
    }
    (out, BnStats { mean, inv_std, batch_var })
}

pub(crate) struct BnGrads<T> {
    pub dx: Vec<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

pub(crate) fn backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    s: Shape,
    gamma: &[T],
    stats: &BnStats<T>,
    mode: Mode,
) -> BnGrads<T> {
    let p = s.plane();
    let m = T::from_usize((s.n * p).max(1)).unwrap();
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    for c in 0..s.c {
        let (mu, is) = (stats.mean[c], stats.inv_std[c]);
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for n in 0..s.n {
            let start = (n * s.c + c) * p;
            for (&g, &v) in dy[start..start + p].iter().zip(&x[start..start + p]) {
                sum_dy += g;
                sum_dy_xhat += g * (v - mu) * is;
            }
        }
        dgamma[c] = sum_dy_xhat;
        dbeta[c] = sum_dy;
        let scale = gamma[c] * is;
        for n in 0..s.n {
            let start = (n * s.c + c) * p;
            for ((d, &g), &v) in dx[start..start + p].iter_mut().zip(&dy[start..start + p]).zip(&x[start..start + p]) {
                *d = match mode {
                    Mode::Train => {
                        let xhat = (v - mu) * is;
                        scale * (g - sum_dy / m - xhat * sum_dy_xhat / m)
                    }
                    Mode::Eval => scale * g,
                };
            }
        }
    }
    BnGrads { dx, dgamma, dbeta }
}

/// Exponential moving average update of running statistics.
pub fn update_running<T: Scalar>(running_mean: &mut [T], running_var: &mut [T], stats: &BnStats<T>) {
    let mom = T::lit(BN_MOMENTUM);
    let keep = T::one() - mom;
    let Some(batch_var) = &stats.batch_var else { return };
    for ((rm, rv), (&bm, &bv)) in running_mean.iter_mut().zip(running_var.iter_mut()).zip(stats.mean.iter().zip(batch_var)) {
        *rm = keep * *rm + mom * bm;
        *rv = keep * *rv + mom * bv;
    }
}

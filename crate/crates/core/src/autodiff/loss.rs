//! Fused sigmoid-cross-entropy and soft-IoU losses over logit maps.
//!
//! Both reduce each sample with optional per-pixel weights and average over the batch.

use crate::tensor::{Scalar, Shape};

/// Smoothing term that keeps the soft IoU defined for empty masks.
pub const IOU_SMOOTH: f64 = 1e-6;

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable `-(y ln σ(x) + (1-y) ln(1-σ(x)))`.
#[inline]
pub fn bce_with_logits<T: Scalar>(x: T, y: T) -> T {
    x.max(T::zero()) - x * y + (-x.abs()).exp().ln_1p()
}

#[inline]
fn weight_at<T: Scalar>(w: Option<&[T]>, i: usize) -> T {
    w.map_or(T::one(), |w| w[i])
}

/// Mean over samples of `Σ w·bce / Σ w`.
pub(crate) fn bce_forward<T: Scalar>(logits: &[T], target: &[T], weight: Option<&[T]>, s: Shape) -> T {
    let per = s.c * s.plane();
    let mut total = T::zero();
    for n in 0..s.n {
        let range = n * per..(n + 1) * per;
        let (mut num, mut den) = (T::zero(), T::zero());
        for i in range {
            let w = weight_at(weight, i);
            num += w * bce_with_logits(logits[i], target[i]);
            den += w;
        }
        total += num / den;
    }
    total / T::from_usize(s.n).unwrap()
}

pub(crate) fn bce_backward<T: Scalar>(g: T, logits: &[T], target: &[T], weight: Option<&[T]>, s: Shape) -> Vec<T> {
    let per = s.c * s.plane();
    let batch = T::from_usize(s.n).unwrap();
    let mut dx = vec![T::zero(); logits.len()];
    for n in 0..s.n {
        let range = n * per..(n + 1) * per;
        let den: T = range.clone().map(|i| weight_at(weight, i)).sum();
        let scale = g / (den * batch);
        for i in range {
            dx[i] = scale * weight_at(weight, i) * (sigmoid(logits[i]) - target[i]);
        }
    }
    dx
}

/// Mean over samples of `1 - (Σ w·p·y + ε) / (Σ w·(p + y - p·y) + ε)` with `p = σ(x)`.
pub(crate) fn iou_forward<T: Scalar>(logits: &[T], target: &[T], weight: Option<&[T]>, s: Shape) -> T {
    let per = s.c * s.plane();
    let eps = T::lit(IOU_SMOOTH);
    let mut total = T::zero();
    for n in 0..s.n {
        let (inter, union) = iou_sums(logits, target, weight, n * per..(n + 1) * per);
        total += T::one() - (inter + eps) / (union + eps);
    }
    total / T::from_usize(s.n).unwrap()
}

fn iou_sums<T: Scalar>(logits: &[T], target: &[T], weight: Option<&[T]>, range: std::ops::Range<usize>) -> (T, T) {
    let (mut inter, mut union) = (T::zero(), T::zero());
    for i in range {
        let w = weight_at(weight, i);
        let p = sigmoid(logits[i]);
        let y = target[i];
        inter += w * p * y;
        union += w * (p + y - p * y);
    }
    (inter, union)
}

pub(crate) fn iou_backward<T: Scalar>(g: T, logits: &[T], target: &[T], weight: Option<&[T]>, s: Shape) -> Vec<T> {
    let per = s.c * s.plane();
    let eps = T::lit(IOU_SMOOTH);
    let batch = T::from_usize(s.n).unwrap();
    let mut dx = vec![T::zero(); logits.len()];
    for n in 0..s.n {
        let range = n * per..(n + 1) * per;
        let (inter, union) = iou_sums(logits, target, weight, range.clone());
        let (a, b) = (inter + eps, union + eps);
        let scale = g / batch;
        for i in range {
            let w = weight_at(weight, i);
            let p = sigmoid(logits[i]);
            let y = target[i];
            // d(1 - a/b)/dp with da/dp = w·y, db/dp = w·(1 - y)
            let dp = -(w * y * b - a * w * (T::one() - y)) / (b * b);
            dx[i] = scale * dp * p * (T::one() - p);
        }
    }
    dx
}

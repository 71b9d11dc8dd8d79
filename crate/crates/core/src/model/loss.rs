//! Deeply supervised training objective.
//!
//! Each side output gets a boundary-weighted BCE plus a boundary-weighted soft
//! IoU; the edge logits get a plain BCE against the Sobel edge target, scaled
//! by `beta_edge`.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::Ctx;
use crate::tensor::{Scalar, Tensor};

use super::ModelOutput;

/// Boundary emphasis factor in `w = 1 + 5 * |avgpool_k(G) - G|`.
pub const BOUNDARY_GAIN: f64 = 5.0;

/// Pooling window for the boundary weights at a given input height: the
/// odd integer nearest to `31 * h / 352`, at least 3.
pub fn boundary_kernel(h: usize) -> usize {
    let target = 31.0 * h as f64 / 352.0;
    let lower = ((target - 1.0) / 2.0).floor() * 2.0 + 1.0;
    let upper = lower + 2.0;
    let k = if target - lower <= upper - target { lower } else { upper };
    (k as usize).max(3)
}

pub fn check_binary<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<()> {
    if let Some(v) = t.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
        return Err(Error::invalid(format!("{what} must be binary (0/1), found {v}")));
    }
    Ok(())
}

/// `1 + 5 * |avgpool_k(G) - G|` with zero padding counted in the average.
pub fn boundary_weights<T: Scalar>(mask: &Tensor<T>, kernel: usize) -> Tensor<T> {
    let s = mask.shape();
    let r = (kernel / 2) as isize;
    let area = T::from_usize(kernel * kernel).unwrap();
    let gain = T::lit(BOUNDARY_GAIN);
    let mut out = Tensor::zeros(s);
    let (h, w) = (s.h as isize, s.w as isize);
    for plane in 0..s.n * s.c {
        let src = &mask.data()[plane * s.plane()..(plane + 1) * s.plane()];
        // summed-area table with a zero border row/column
        let sw = s.w + 1;
        let mut sat = vec![T::zero(); (s.h + 1) * sw];
        for y in 0..s.h {
            let mut row = T::zero();
            for x in 0..s.w {
                row += src[y * s.w + x];
                sat[(y + 1) * sw + x + 1] = sat[y * sw + x + 1] + row;
            }
        }
        let dst = &mut out.data_mut()[plane * s.plane()..(plane + 1) * s.plane()];
        for y in 0..h {
            let (y0, y1) = ((y - r).clamp(0, h) as usize, (y + r + 1).clamp(0, h) as usize);
            for x in 0..w {
                let (x0, x1) = ((x - r).clamp(0, w) as usize, (x + r + 1).clamp(0, w) as usize);
                let sum = sat[y1 * sw + x1] - sat[y0 * sw + x1] - sat[y1 * sw + x0] + sat[y0 * sw + x0];
                let i = (y * w + x) as usize;
                dst[i] = T::one() + gain * (sum / area - src[i]).abs();
            }
        }
    }
    out
}

/// Weighted BCE + weighted soft IoU on one logit map; returns the loss node.
pub fn seg_loss<T: Scalar>(ctx: &mut Ctx<'_, T>, logits: Var, mask: &Tensor<T>) -> Result<Var> {
    check_binary(mask, "segmentation mask")?;
    let weights = boundary_weights(mask, boundary_kernel(mask.shape().h));
    let bce = ctx.tape.bce_with_logits(logits, mask.clone(), Some(weights.clone()))?;
    let iou = ctx.tape.soft_iou(logits, mask.clone(), Some(weights))?;
    ctx.tape.add(bce, iou)
}

/// Scalar values of every loss term of one forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub seg: [f64; 4],
    pub edge: f64,
    pub beta_edge: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn recomposed(&self) -> f64 {
        self.seg[0] + self.seg[1] + self.seg[2] + self.seg[3] + self.beta_edge * self.edge
    }
}

/// `Σ_i seg_loss(S_i, G) + β · BCE(Se, Ge)`.
pub fn total_loss<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    out: &ModelOutput,
    mask: &Tensor<T>,
    edges: &Tensor<T>,
    beta_edge: f64,
) -> Result<(Var, LossBreakdown)> {
    check_binary(edges, "edge target")?;
    let mut seg_vars = [out.side[0]; 4];
    for (slot, &s) in seg_vars.iter_mut().zip(&out.side) {
        *slot = seg_loss(ctx, s, mask)?;
    }
    let edge = ctx.tape.bce_with_logits(out.edge, edges.clone(), None)?;
    let mut total = seg_vars[0];
    for &s in &seg_vars[1..] {
        total = ctx.tape.add(total, s)?;
    }
    let weighted_edge = ctx.tape.scale(edge, T::lit(beta_edge));
    let total = ctx.tape.add(total, weighted_edge)?;

    let scalar = |v: Var| ctx.tape.value(v).data()[0].to_f64_lossy();
    let breakdown = LossBreakdown {
        seg: seg_vars.map(scalar),
        edge: scalar(edge),
        beta_edge,
        total: scalar(total),
    };
    Ok((total, breakdown))
}

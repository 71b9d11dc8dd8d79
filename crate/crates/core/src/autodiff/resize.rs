//! Bilinear resampling.

use crate::tensor::{Scalar, Shape};

#[derive(Clone, Debug)]
pub(crate) struct AxisMap<T> {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<T>,
}

impl<T: Scalar> AxisMap<T> {
    pub(crate) fn new(input: usize, output: usize, align_corners: bool) -> Self {
        let mut lo = Vec::with_capacity(output);
        let mut hi = Vec::with_capacity(output);
        let mut frac = Vec::with_capacity(output);
        for d in 0..output {
            let src = if align_corners {
                if output > 1 {
                    d as f64 * (input - 1) as f64 / (output - 1) as f64
                } else {
                    0.0
                }
            } else {
                ((d as f64 + 0.5) * input as f64 / output as f64 - 0.5).max(0.0)
            };
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            lo.push(i0);
            hi.push(i1);
            frac.push(T::lit(src - i0 as f64));
        }
        Self { lo, hi, frac }
    }
}

pub(crate) fn forward<T: Scalar>(x: &[T], s: Shape, out_h: usize, out_w: usize, align_corners: bool) -> (Vec<T>, Shape) {
    let os = Shape::new(s.n, s.c, out_h, out_w);
    if out_h == s.h && out_w == s.w && align_corners {
        return (x.to_vec(), os);
    }
    let ys = AxisMap::<T>::new(s.h, out_h, align_corners);
    let xs = AxisMap::<T>::new(s.w, out_w, align_corners);
    let mut out = vec![T::zero(); os.numel()];
    for (src, dst) in x.chunks(s.plane().max(1)).zip(out.chunks_mut(os.plane().max(1))) {
        for oy in 0..out_h {
            let (y0, y1, fy) = (ys.lo[oy], ys.hi[oy], ys.frac[oy]);
            let r0 = &src[y0 * s.w..(y0 + 1) * s.w];
            let r1 = &src[y1 * s.w..(y1 + 1) * s.w];
            for ox in 0..out_w {
                let (x0, x1, fx) = (xs.lo[ox], xs.hi[ox], xs.frac[ox]);
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                dst[oy * out_w + ox] = top + (bot - top) * fy;
            }
        }
    }
    (out, os)
}

pub(crate) fn backward<T: Scalar>(dy: &[T], s: Shape, out_h: usize, out_w: usize, align_corners: bool) -> Vec<T> {
    if out_h == s.h && out_w == s.w && align_corners {
        return dy.to_vec();
    }
    let ys = AxisMap::<T>::new(s.h, out_h, align_corners);
    let xs = AxisMap::<T>::new(s.w, out_w, align_corners);
    let mut dx = vec![T::zero(); s.numel()];
    let op = out_h * out_w;
    for (g, dst) in dy.chunks(op.max(1)).zip(dx.chunks_mut(s.plane().max(1))) {
        for oy in 0..out_h {
            let (y0, y1, fy) = (ys.lo[oy], ys.hi[oy], ys.frac[oy]);
            for ox in 0..out_w {
                let (x0, x1, fx) = (xs.lo[ox], xs.hi[ox], xs.frac[ox]);
                let v = g[oy * out_w + ox];
                let top = v * (T::one() - fy);
                let bot = v * fy;
                dst[y0 * s.w + x0] += top * (T::one() - fx);
                dst[y0 * s.w + x1] += top * fx;
                dst[y1 * s.w + x0] += bot * (T::one() - fx);
                dst[y1 * s.w + x1] += bot * fx;
            }
        }
    }
    dx
}

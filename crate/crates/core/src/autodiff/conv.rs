//! 2-D cross-correlation via im2col + GEMM.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape};

/// Stride, zero padding and dilation of a square-kernel convolution window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub const fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self { stride, padding, dilation }
    }

    /// Stride 1 with the padding that keeps spatial size for an odd kernel.
    pub const fn same(kernel: usize, dilation: usize) -> Self {
        Self { stride: 1, padding: dilation * (kernel - 1) / 2, dilation }
    }

    /// Output extent along one axis.
    pub fn out_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        (padded >= span && self.stride > 0).then(|| (padded - span) / self.stride + 1)
    }

    pub fn output_shape(&self, x: Shape, w: Shape) -> Result<Shape> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::invalid(format!("conv2d: stride and dilation must be positive, got {self:?}")));
        }
        if x.c != w.c {
            return Err(Error::shape(format!(
                "conv2d: input channels {} do not match weight Cin {} (input {x}, weight {w})",
                x.c, w.c
            )));
        }
        let oh = self.out_extent(x.h, w.h).ok_or_else(|| {
            Error::shape(format!(
                "conv2d: height {} with padding {} is smaller than the dilated kernel height {}",
                x.h,
                self.padding,
                self.dilation * (w.h - 1) + 1
            ))
        })?;
        let ow = self.out_extent(x.w, w.w).ok_or_else(|| {
            Error::shape(format!(
                "conv2d: width {} with padding {} is smaller than the dilated kernel width {}",
                x.w,
                self.padding,
                self.dilation * (w.w - 1) + 1
            ))
        })?;
        Ok(Shape::new(x.n, w.n, oh, ow))
    }

    fn is_pointwise(&self, w: Shape) -> bool {
        w.h == 1 && w.w == 1 && self.stride == 1 && self.padding == 0
    }
}

struct Window {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    geom: ConvGeom,
}

impl Window {
    fn rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Source index along one axis, or `None` when it lands in the padding.
    #[inline]
    fn src(&self, out: usize, tap: usize, extent: usize) -> Option<usize> {
        let pos = (out * self.geom.stride + tap * self.geom.dilation) as isize - self.geom.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let ncol = self.cols();
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * ncol..(row + 1) * ncol];
                    for oy in 0..self.oh {
                        let out_row = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        match self.src(oy, ki, self.h) {
                            None => out_row.fill(T::zero()),
                            Some(iy) => {
                                let src_row = &plane[iy * self.w..(iy + 1) * self.w];
                                for (ox, v) in out_row.iter_mut().enumerate() {
                                    *v = match self.src(ox, kj, self.w) {
                                        Some(ix) => src_row[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let ncol = self.cols();
        for ci in 0..self.cin {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * ncol..(row + 1) * ncol];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ki, self.h) else { continue };
                        let dst_row = &mut plane[iy * self.w..(iy + 1) * self.w];
                        let src_row = &src[oy * self.ow..(oy + 1) * self.ow];
                        for (ox, &g) in src_row.iter().enumerate() {
                            if let Some(ix) = self.src(ox, kj, self.w) {
                                dst_row[ix] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn window(x: Shape, w: Shape, out: Shape, geom: ConvGeom) -> Window {
    Window { cin: x.c, h: x.h, w: x.w, kh: w.h, kw: w.w, oh: out.h, ow: out.w, geom }
}

pub(crate) fn forward<T: Scalar>(
    x: &[T],
    xs: Shape,
    weight: &[T],
    ws: Shape,
    bias: Option<&[T]>,
    geom: ConvGeom,
) -> Result<(Vec<T>, Shape)> {
    let os = geom.output_shape(xs, ws)?;
    if let Some(b) = bias {
        if b.len() != ws.n {
            return Err(Error::shape(format!("conv2d: bias length {} does not match Cout {}", b.len(), ws.n)));
        }
    }
    let win = window(xs, ws, os, geom);
    let pointwise = geom.is_pointwise(ws);
    let per_in = xs.c * xs.plane();
    let per_out = os.c * os.plane();
    let mut out = vec![T::zero(); os.numel()];
    out.par_chunks_mut(per_out.max(1)).enumerate().for_each_init(
        || if pointwise { Vec::new() } else { vec![T::zero(); win.rows() * win.cols()] },
        |cols, (n, dst)| {
            let src = &x[n * per_in..(n + 1) * per_in];
            let cols: &[T] = if pointwise {
                src
            } else {
                win.im2col(src, cols);
                cols
            };
            if let Some(b) = bias {
                for (co, row) in dst.chunks_mut(win.cols()).enumerate() {
                    row.fill(b[co]);
                }
            }
            let beta = if bias.is_some() { T::one() } else { T::zero() };
            T::gemm(ws.n, win.rows(), win.cols(), T::one(), weight, false, cols, false, beta, dst);
        },
    );
    Ok((out, os))
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    xs: Shape,
    weight: &[T],
    ws: Shape,
    geom: ConvGeom,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<T> {
    let os = geom.output_shape(xs, ws).expect("validated in forward");
    let win = window(xs, ws, os, geom);
    let pointwise = geom.is_pointwise(ws);
    let per_in = xs.c * xs.plane();
    let per_out = os.c * os.plane();
    let (rows, ncol) = (win.rows(), win.cols());

    let dx = need_dx.then(|| {
        let mut dx = vec![T::zero(); xs.numel()];
        dx.par_chunks_mut(per_in.max(1)).enumerate().for_each_init(
            || if pointwise { Vec::new() } else { vec![T::zero(); rows * ncol] },
            |dcols, (n, dst)| {
                let g = &dy[n * per_out..(n + 1) * per_out];
                if pointwise {
                    T::gemm(rows, ws.n, ncol, T::one(), weight, true, g, false, T::zero(), dst);
                } else {
                    T::gemm(rows, ws.n, ncol, T::one(), weight, true, g, false, T::zero(), dcols);
                    win.col2im(dcols, dst);
                }
            },
        );
        dx
    });

    let dw = need_dw.then(|| {
        (0..xs.n)
            .into_par_iter()
            .fold(
                || (vec![T::zero(); ws.numel()], if pointwise { Vec::new() } else { vec![T::zero(); rows * ncol] }),
                |(mut acc, mut cols), n| {
                    let src = &x[n * per_in..(n + 1) * per_in];
                    let c: &[T] = if pointwise {
                        src
                    } else {
                        win.im2col(src, &mut cols);
                        &cols
                    };
                    let g = &dy[n * per_out..(n + 1) * per_out];
                    T::gemm(ws.n, ncol, rows, T::one(), g, false, c, true, T::one(), &mut acc);
                    (acc, cols)
                },
            )
            .map(|(acc, _)| acc)
            .reduce(
                || vec![T::zero(); ws.numel()],
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    a
                },
            )
    });

    let db = need_db.then(|| {
        let mut db = vec![T::zero(); ws.n];
        for n in 0..xs.n {
            for (co, acc) in db.iter_mut().enumerate() {
                let start = n * per_out + co * ncol;
                *acc += dy[start..start + ncol].iter().copied().sum::<T>();
            }
        }
        db
    });

    ConvGrads { dx, dw, db }
}

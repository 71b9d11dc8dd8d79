//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and the inputs it
//! needs for the vector-Jacobian product. Nodes only ever reference earlier
//! nodes, so the tape is topologically ordered by construction and
//! [`Tape::backward`] is a single reverse sweep.

pub mod conv;
pub mod gradcheck;
pub mod loss;
pub mod norm;
pub mod optim;
mod resize;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

pub use conv::ConvGeom;
pub use norm::{BnStats, Mode};
pub use optim::{Adam, AdamConfig};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Mul,
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, stats: BnStats<T>, mode: Mode },
    Act { x: Var, kind: Activation },
    Resize { x: Var, align_corners: bool },
    Concat(Vec<Var>),
    Binary { a: Var, b: Var, kind: Binary },
    GlobalAvgPool(Var),
    Scale(Var, T),
    Sum(Var),
    Bce { logits: Var, target: Tensor<T>, weight: Option<Tensor<T>> },
    SoftIou { logits: Var, target: Tensor<T>, weight: Option<Tensor<T>> },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Record of executed operations; owns every intermediate value.
///
/// A tape is a single-threaded unit of work. Kernels may fan out internally
/// over the batch axis, but nodes are appended and differentiated in order.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    dry: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), dry: false }
    }

    /// A tape that validates shapes but skips all arithmetic; outputs are zero-filled.
    ///
    /// Used for static cost analysis.
    pub fn dry_run() -> Self {
        Self { dry: true, ..Self::new() }
    }

    pub fn is_dry(&self) -> bool {
        self.dry
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) loss w.r.t. a leaf.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::from_vec(self.shape(v), g.clone()).expect("grad shape matches value"))
    }

    fn push(&mut self, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let value = if self.dry {
            let os = geom.output_shape(xs, ws)?;
            if let Some(b) = b {
                if self.value(b).numel() != ws.n {
                    return Err(Error::shape(format!("conv2d: bias length does not match Cout {}", ws.n)));
                }
            }
            Tensor::zeros(os)
        } else {
            let (out, os) = conv::forward(self.data(x), xs, self.data(w), ws, b.map(|b| self.data(b)), geom)?;
            Tensor::from_vec(os, out)?
        };
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, &inputs, Op::Conv2d { x, w, b, geom }))
    }

    /// Batch normalization; returns the output and the statistics used.
    ///
    /// Running statistics are read (eval) but never written here: callers
    /// fold [`BnStats::batch_var`] into their running buffers.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        mode: Mode,
    ) -> Result<(Var, BnStats<T>)> {
        let s = self.shape(x);
        for (what, len) in [
            ("gamma", self.value(gamma).numel()),
            ("beta", self.value(beta).numel()),
            ("running mean", running_mean.len()),
            ("running var", running_var.len()),
        ] {
            if len != s.c {
                return Err(Error::shape(format!("batch_norm: {what} has {len} entries but input has C={}", s.c)));
            }
        }
        let (value, stats) = if self.dry {
            let zeros = vec![T::zero(); s.c];
            (Tensor::zeros(s), BnStats { mean: zeros.clone(), inv_std: zeros, batch_var: None })
        } else {
            let (out, stats) = norm::forward(
                self.data(x),
                s,
                self.data(gamma),
                self.data(beta),
                running_mean,
                running_var,
                mode,
            );
            (Tensor::from_vec(s, out)?, stats)
        };
        let v = self.push(value, &[x, gamma, beta], Op::BatchNorm { x, gamma, beta, stats: stats.clone(), mode });
        Ok((v, stats))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let value = if self.dry {
            Tensor::zeros(self.shape(x))
        } else {
            match kind {
                Activation::Relu => self.value(x).map(|v| v.max(T::zero())),
                Activation::Sigmoid => self.value(x).map(loss::sigmoid),
            }
        };
        self.push(value, &[x], Op::Act { x, kind })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize, align_corners: bool) -> Result<Var> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::invalid(format!("resize: target size {out_h}x{out_w} must be positive")));
        }
        let s = self.shape(x);
        if s.h == 0 || s.w == 0 {
            return Err(Error::shape(format!("resize: cannot resample empty input {s}")));
        }
        let value = if self.dry {
            Tensor::zeros(Shape::new(s.n, s.c, out_h, out_w))
        } else {
            let (out, os) = resize::forward(self.data(x), s, out_h, out_w, align_corners);
            Tensor::from_vec(os, out)?
        };
        Ok(self.push(value, &[x], Op::Resize { x, align_corners }))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::invalid("concat: empty input list"))?;
        let s0 = self.shape(first);
        let mut channels = 0;
        for &v in xs {
            let s = self.shape(v);
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                return Err(Error::shape(format!("concat: input {s} does not share N, H, W with {s0}")));
            }
            channels += s.c;
        }
        let os = Shape::new(s0.n, channels, s0.h, s0.w);
        let value = if self.dry {
            Tensor::zeros(os)
        } else {
            let mut out = Vec::with_capacity(os.numel());
            for n in 0..s0.n {
                for &v in xs {
                    let s = self.shape(v);
                    let per = s.c * s.plane();
                    out.extend_from_slice(&self.data(v)[n * per..(n + 1) * per]);
                }
            }
            Tensor::from_vec(os, out)?
        };
        Ok(self.push(value, xs, Op::Concat(xs.to_vec())))
    }

    /// Elementwise `a (+|*) b` where every extent of `b` is 1 or equal to `a`'s.
    pub fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bc = Broadcast::new(sa, sb)?;
        let value = if self.dry {
            Tensor::zeros(sa)
        } else {
            let (da, db) = (self.data(a), self.data(b));
            let mut out = vec![T::zero(); sa.numel()];
            bc.for_each(|o, j| {
                out[o] = match kind {
                    Binary::Add => da[o] + db[j],
                    Binary::Mul => da[o] * db[j],
                }
            });
            Tensor::from_vec(sa, out)?
        };
        Ok(self.push(value, &[a, b], Op::Binary { a, b, kind }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.plane() == 0 {
            return Err(Error::shape(format!("global_avg_pool: empty spatial extent {s}")));
        }
        let os = Shape::new(s.n, s.c, 1, 1);
        let value = if self.dry {
            Tensor::zeros(os)
        } else {
            let inv = T::one() / T::from_usize(s.plane()).unwrap();
            let out = self.data(x).chunks(s.plane()).map(|p| p.iter().copied().sum::<T>() * inv).collect();
            Tensor::from_vec(os, out)?
        };
        Ok(self.push(value, &[x], Op::GlobalAvgPool(x)))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = if self.dry { Tensor::zeros(self.shape(x)) } else { self.value(x).map(|v| v * factor) };
        self.push(value, &[x], Op::Scale(x, factor))
    }

    /// Sum of all entries as a `1x1x1x1` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(if self.dry { T::zero() } else { self.value(x).sum() });
        self.push(value, &[x], Op::Sum(x))
    }

    fn check_target(&self, logits: Var, target: &Tensor<T>, weight: Option<&Tensor<T>>, what: &str) -> Result<()> {
        let s = self.shape(logits);
        if target.shape() != s {
            return Err(Error::shape(format!("{what}: target {} does not match logits {s}", target.shape())));
        }
        if let Some(w) = weight {
            if w.shape() != s {
                return Err(Error::shape(format!("{what}: weight {} does not match logits {s}", w.shape())));
            }
        }
        Ok(())
    }

    /// Sigmoid cross-entropy, `Σ w·bce / Σ w` per sample, averaged over the batch.
    pub fn bce_with_logits(&mut self, logits: Var, target: Tensor<T>, weight: Option<Tensor<T>>) -> Result<Var> {
        self.check_target(logits, &target, weight.as_ref(), "bce")?;
        let s = self.shape(logits);
        let v = if self.dry {
            T::zero()
        } else {
            loss::bce_forward(self.data(logits), target.data(), weight.as_ref().map(|w| w.data()), s)
        };
        Ok(self.push(Tensor::scalar(v), &[logits], Op::Bce { logits, target, weight }))
    }

    /// Weighted soft-IoU loss on `σ(logits)`, averaged over the batch.
    pub fn soft_iou(&mut self, logits: Var, target: Tensor<T>, weight: Option<Tensor<T>>) -> Result<Var> {
        self.check_target(logits, &target, weight.as_ref(), "soft_iou")?;
        let s = self.shape(logits);
        let v = if self.dry {
            T::zero()
        } else {
            loss::iou_forward(self.data(logits), target.data(), weight.as_ref().map(|w| w.data()), s)
        };
        Ok(self.push(Tensor::scalar(v), &[logits], Op::SoftIou { logits, target, weight }))
    }

    /// Populates gradients of `loss` w.r.t. every reachable leaf that requires one.
    ///
    /// Leaf gradients accumulate across calls; intermediate gradients are
    /// released as soon as they have been propagated.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.dry {
            return Err(Error::invalid("backward on a dry-run tape"));
        }
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(Error::shape(format!("backward needs a scalar loss, got shape {ls}")));
        }
        if !self.value(loss).all_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        self.grads.resize_with(self.nodes.len(), || None);
        for (node, g) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) {
                *g = None;
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        accumulate(&mut self.grads, &self.nodes, loss, vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = self.grads[i].take() else { continue };
            self.propagate(i, &dy);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, dy: &[T]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let needs = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| nodes[v.0].value.data();
        let shp = |v: Var| nodes[v.0].value.shape();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let g = conv::backward(
                    dy,
                    val(*x),
                    shp(*x),
                    val(*w),
                    shp(*w),
                    *geom,
                    needs(*x),
                    needs(*w),
                    b.is_some_and(needs),
                );
                if let Some(dx) = g.dx {
                    accumulate(grads, nodes, *x, dx);
                }
                if let Some(dw) = g.dw {
                    accumulate(grads, nodes, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, g.db) {
                    accumulate(grads, nodes, *b, db);
                }
            }
            Op::BatchNorm { x, gamma, beta, stats, mode } => {
                let g = norm::backward(dy, val(*x), shp(*x), val(*gamma), stats, *mode);
                accumulate(grads, nodes, *x, g.dx);
                accumulate(grads, nodes, *gamma, g.dgamma);
                accumulate(grads, nodes, *beta, g.dbeta);
            }
            Op::Act { x, kind } => {
                let out = nodes[i].value.data();
                let dx = match kind {
                    Activation::Relu => out.iter().zip(dy).map(|(&o, &g)| if o > T::zero() { g } else { T::zero() }).collect(),
                    Activation::Sigmoid => out.iter().zip(dy).map(|(&o, &g)| g * o * (T::one() - o)).collect(),
                };
                accumulate(grads, nodes, *x, dx);
            }
            Op::Resize { x, align_corners } => {
                let os = nodes[i].value.shape();
                let dx = resize::backward(dy, shp(*x), os.h, os.w, *align_corners);
                accumulate(grads, nodes, *x, dx);
            }
            Op::Concat(xs) => {
                let n = nodes[i].value.shape().n;
                let mut offset = 0;
                let per_out: usize = xs.iter().map(|&v| shp(v).c * shp(v).plane()).sum();
                for &v in xs {
                    let s = shp(v);
                    let per = s.c * s.plane();
                    if needs(v) {
                        let mut dx = Vec::with_capacity(s.numel());
                        for k in 0..n {
                            let start = k * per_out + offset;
                            dx.extend_from_slice(&dy[start..start + per]);
                        }
                        accumulate(grads, nodes, v, dx);
                    }
                    offset += per;
                }
            }
            Op::Binary { a, b, kind } => {
                let bc = Broadcast::new(shp(*a), shp(*b)).expect("validated in forward");
                if needs(*a) {
                    let dx = match kind {
                        Binary::Add => dy.to_vec(),
                        Binary::Mul => {
                            let vb = val(*b);
                            let mut dx = vec![T::zero(); dy.len()];
                            bc.for_each(|o, j| dx[o] = dy[o] * vb[j]);
                            dx
                        }
                    };
                    accumulate(grads, nodes, *a, dx);
                }
                if needs(*b) {
                    let mut db = vec![T::zero(); shp(*b).numel()];
                    match kind {
                        Binary::Add => bc.for_each(|o, j| db[j] += dy[o]),
                        Binary::Mul => {
                            let va = val(*a);
                            bc.for_each(|o, j| db[j] += dy[o] * va[o]);
                        }
                    }
                    accumulate(grads, nodes, *b, db);
                }
            }
            Op::GlobalAvgPool(x) => {
                let s = shp(*x);
                let inv = T::one() / T::from_usize(s.plane()).unwrap();
                let dx = dy.iter().flat_map(|&g| std::iter::repeat_n(g * inv, s.plane())).collect();
                accumulate(grads, nodes, *x, dx);
            }
            Op::Scale(x, factor) => {
                let dx = dy.iter().map(|&g| g * *factor).collect();
                accumulate(grads, nodes, *x, dx);
            }
            Op::Sum(x) => {
                accumulate(grads, nodes, *x, vec![dy[0]; shp(*x).numel()]);
            }
            Op::Bce { logits, target, weight } => {
                let dx = loss::bce_backward(dy[0], val(*logits), target.data(), weight.as_ref().map(|w| w.data()), shp(*logits));
                accumulate(grads, nodes, *logits, dx);
            }
            Op::SoftIou { logits, target, weight } => {
                let dx = loss::iou_backward(dy[0], val(*logits), target.data(), weight.as_ref().map(|w| w.data()), shp(*logits));
                accumulate(grads, nodes, *logits, dx);
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var, g: Vec<T>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

/// Index mapping from an output of shape `a` to a broadcast operand of shape `b`.
struct Broadcast {
    a: Shape,
    strides: [usize; 4],
}

impl Broadcast {
    fn new(a: Shape, b: Shape) -> Result<Self> {
        let (ad, bd) = (a.dims(), b.dims());
        let names = ["N", "C", "H", "W"];
        for k in 0..4 {
            if bd[k] != ad[k] && bd[k] != 1 {
                return Err(Error::shape(format!(
                    "cannot broadcast {b} against {a}: extent {} of {} is neither 1 nor {}",
                    names[k], bd[k], ad[k]
                )));
            }
        }
        let full = [b.c * b.h * b.w, b.h * b.w, b.w, 1];
        let mut strides = [0; 4];
        for k in 0..4 {
            strides[k] = if bd[k] == 1 && ad[k] != 1 { 0 } else { full[k] };
        }
        Ok(Self { a, strides })
    }

    #[inline]
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let a = self.a;
        let [sn, sc, sh, sw] = self.strides;
        let mut o = 0;
        for n in 0..a.n {
            for c in 0..a.c {
                for h in 0..a.h {
                    let base = n * sn + c * sc + h * sh;
                    for w in 0..a.w {
                        f(o, base + w * sw);
                        o += 1;
                    }
                }
            }
        }
    }
}

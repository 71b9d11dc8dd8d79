//! Layer building blocks and the forward context that binds them to a tape.

use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{BnStats, ConvGeom, Mode, Tape, Var};
use crate::cost::{conv_flops, conv_params, CostEntry, CostKind, CostReport};
use crate::error::Result;
use crate::params::{fan_in_uniform, ParamStore};
use crate::tensor::{Scalar, Shape, Tensor};

/// State of one forward pass: the tape, bound parameters, pending batch-norm
/// running-stat updates and (optionally) a cost ledger.
pub struct Ctx<'p, T: Scalar> {
    pub tape: Tape<T>,
    params: &'p ParamStore<T>,
    mode: Mode,
    track_grads: bool,
    bound: HashMap<String, Var>,
    bn_updates: Vec<(String, BnStats<T>)>,
    costs: Option<Vec<CostEntry>>,
    scope: String,
}

impl<'p, T: Scalar> Ctx<'p, T> {
    pub fn new(params: &'p ParamStore<T>, mode: Mode) -> Self {
        Self {
            tape: Tape::new(),
            params,
            mode,
            track_grads: mode == Mode::Train,
            bound: HashMap::new(),
            bn_updates: Vec::new(),
            costs: None,
            scope: String::new(),
        }
    }

    /// Shape-only pass that records per-layer costs instead of computing values.
    pub fn costing(params: &'p ParamStore<T>) -> Self {
        Self { tape: Tape::dry_run(), costs: Some(Vec::new()), track_grads: false, ..Self::new(params, Mode::Eval) }
    }

    /// Overrides whether parameters are bound as gradient-receiving leaves.
    pub fn with_grads(mut self, track: bool) -> Self {
        self.track_grads = track;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn input(&mut self, x: Tensor<T>) -> Var {
        self.tape.constant(x)
    }

    /// Binds a named parameter onto the tape (once per pass).
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let p = self.params.get(name)?;
        let v = self.tape.leaf(p.value.clone(), self.track_grads && p.trainable);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound_var(&self, name: &str) -> Option<Var> {
        self.bound.get(name).copied()
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.tape.shape(v)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    /// Runs `f` with costs attributed to `module`.
    pub fn scoped<R>(&mut self, module: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        let prev = std::mem::replace(&mut self.scope, module.to_string());
        let out = f(self);
        self.scope = prev;
        out
    }

    fn record(&mut self, layer: &str, kind: CostKind, params: u64, flops: u64, output: Shape) {
        if let Some(costs) = &mut self.costs {
            costs.push(CostEntry { module: self.scope.clone(), layer: layer.to_string(), kind, params, flops, output });
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.tape.relu(x);
        let s = self.shape(y);
        self.record("relu", CostKind::Activation, 0, s.numel() as u64, s);
        y
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.tape.sigmoid(x);
        let s = self.shape(y);
        self.record("sigmoid", CostKind::Activation, 0, s.numel() as u64, s);
        y
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.tape.add(a, b)?;
        let s = self.shape(y);
        self.record("add", CostKind::Elementwise, 0, s.numel() as u64, s);
        Ok(y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.tape.mul(a, b)?;
        let s = self.shape(y);
        self.record("mul", CostKind::Elementwise, 0, s.numel() as u64, s);
        Ok(y)
    }

    /// Bilinear resize with `align_corners = true`, the network-wide convention.
    pub fn resize(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let y = self.tape.resize_bilinear(x, h, w, true)?;
        let s = self.shape(y);
        self.record("resize", CostKind::Resize, 0, s.numel() as u64, s);
        Ok(y)
    }

    pub fn resize_like(&mut self, x: Var, like: Var) -> Result<Var> {
        let s = self.shape(like);
        self.resize(x, s.h, s.w)
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let y = self.tape.concat_channels(xs)?;
        let s = self.shape(y);
        self.record("concat", CostKind::Concat, 0, 0, s);
        Ok(y)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = self.tape.global_avg_pool(x)?;
        let s = self.shape(y);
        self.record("gap", CostKind::Pool, 0, s.numel() as u64, s);
        Ok(y)
    }

    /// Releases the parameter borrow, keeping what is needed to update the store.
    pub fn finish(self) -> Pass<T> {
        Pass { tape: self.tape, bound: self.bound, bn_updates: self.bn_updates }
    }

    pub fn into_cost_report(self, input_h: usize, input_w: usize) -> CostReport {
        CostReport { input_h, input_w, entries: self.costs.unwrap_or_default() }
    }
}

/// A completed forward pass detached from the parameter store.
pub struct Pass<T: Scalar> {
    pub tape: Tape<T>,
    bound: HashMap<String, Var>,
    bn_updates: Vec<(String, BnStats<T>)>,
}

impl<T: Scalar> Pass<T> {
    /// Copies leaf gradients from the tape into the store's accumulators.
    pub fn collect_grads(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (name, &v) in &self.bound {
            if let Some(g) = self.tape.grad(v) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }

    /// Folds recorded train-mode batch statistics into the store's running buffers.
    pub fn apply_bn_updates(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        for (name, stats) in self.bn_updates.drain(..) {
            let (mean_key, var_key) = (format!("{name}.running_mean"), format!("{name}.running_var"));
            let mut mean = store.value(&mean_key)?.clone();
            let mut var = store.value(&var_key)?.clone();
            crate::autodiff::norm::update_running(mean.data_mut(), var.data_mut(), &stats);
            store.get_mut(&mean_key)?.value = mean;
            store.get_mut(&var_key)?.value = var;
        }
        Ok(())
    }

    /// Gradient of a bound parameter, if the backward pass reached it.
    pub fn param_grad(&self, name: &str) -> Option<Tensor<T>> {
        self.bound.get(name).and_then(|&v| self.tape.grad(v))
    }
}

/// Convolution layer with bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub geom: ConvGeom,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize, geom: ConvGeom) -> Self {
        Self { name: name.into(), cin, cout, kernel, geom }
    }

    pub fn pointwise(name: impl Into<String>, cin: usize, cout: usize) -> Self {
        Self::new(name, cin, cout, 1, ConvGeom::new(1, 0, 1))
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.cout, self.cin, self.kernel, self.kernel)
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        store.insert(self.weight_name(), fan_in_uniform(self.weight_shape(), self.fan_in(), rng), true);
        store.insert(self.bias_name(), Tensor::zeros(Shape::new(1, self.cout, 1, 1)), true);
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(&self.weight_name())?;
        let b = ctx.param(&self.bias_name())?;
        let y = ctx.tape.conv2d(x, w, Some(b), self.geom)?;
        let out = ctx.shape(y);
        let k = self.kernel;
        ctx.record(
            &self.name,
            CostKind::Conv,
            conv_params(self.cin, self.cout, k, k, true),
            conv_flops(self.cin, self.cout, k, k, out),
            out,
        );
        Ok(y)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchNorm2d {
    pub name: String,
    pub channels: usize,
}

impl BatchNorm2d {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self { name: name.into(), channels }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>) {
        let s = Shape::new(1, self.channels, 1, 1);
        store.insert(format!("{}.gamma", self.name), Tensor::ones(s), true);
        store.insert(format!("{}.beta", self.name), Tensor::zeros(s), true);
        store.insert(format!("{}.running_mean", self.name), Tensor::zeros(s), false);
        store.insert(format!("{}.running_var", self.name), Tensor::ones(s), false);
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let gamma = ctx.param(&format!("{}.gamma", self.name))?;
        let beta = ctx.param(&format!("{}.beta", self.name))?;
        let rm = ctx.params.value(&format!("{}.running_mean", self.name))?;
        let rv = ctx.params.value(&format!("{}.running_var", self.name))?;
        let mode = ctx.mode;
        let (y, stats) = ctx.tape.batch_norm(x, gamma, beta, rm.data(), rv.data(), mode)?;
        if mode == Mode::Train && !ctx.tape.is_dry() {
            ctx.bn_updates.push((self.name.clone(), stats));
        }
        let s = ctx.shape(y);
        ctx.record(&self.name, CostKind::BatchNorm, 2 * self.channels as u64, s.numel() as u64, s);
        Ok(y)
    }
}

/// Convolution, batch normalization and ReLU in sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn new(name: &str, cin: usize, cout: usize, kernel: usize, geom: ConvGeom) -> Self {
        Self { conv: Conv2d::new(format!("{name}.conv"), cin, cout, kernel, geom), bn: BatchNorm2d::new(format!("{name}.bn"), cout) }
    }

    /// 3x3, stride 1, "same" padding for the given dilation.
    pub fn same3(name: &str, cin: usize, cout: usize, dilation: usize) -> Self {
        Self::new(name, cin, cout, 3, ConvGeom::same(3, dilation))
    }

    pub fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        self.conv.init(store, rng);
        self.bn.init(store);
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        Ok(ctx.relu(y))
    }
}

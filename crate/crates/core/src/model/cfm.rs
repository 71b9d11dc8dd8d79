//! Cross-level fusion with local (per-pixel) and global (pooled) channel attention.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvBnRelu, Ctx};
use crate::params::ParamStore;
use crate::tensor::Scalar;

/// Two point-wise convolutions with a ReLU between: `C -> C/t -> C`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bottleneck {
    pub reduce: Conv2d,
    pub expand: Conv2d,
}

impl Bottleneck {
    pub fn new(name: &str, channels: usize, reduction: usize) -> Self {
        let mid = channels / reduction;
        Self {
            reduce: Conv2d::pointwise(format!("{name}.pwc1"), channels, mid),
            expand: Conv2d::pointwise(format!("{name}.pwc2"), mid, channels),
        }
    }

    fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        self.reduce.init(store, rng);
        self.expand.init(store, rng);
    }

    /// `σ(pwc2(relu(pwc1(x))))`
    pub fn attention<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.reduce.forward(ctx, x)?;
        let y = ctx.relu(y);
        let y = self.expand.forward(ctx, y)?;
        Ok(ctx.sigmoid(y))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cfm {
    pub name: String,
    pub branches: [ConvBnRelu; 3],
    pub local: Bottleneck,
    pub global: Bottleneck,
    pub out: ConvBnRelu,
}

/// Intermediate values of one fusion, for inspection in tests.
#[derive(Clone, Copy, Debug)]
pub struct CfmTrace {
    pub branches: [Var; 3],
    pub w_local: Var,
    pub w_global: Var,
    pub enhanced_local: Var,
    pub enhanced_global: Var,
    pub output: Var,
}

impl Cfm {
    /// `width` is the channel count of each input; the concatenation has `2 * width`.
    pub fn new(name: &str, width: usize, reduction: usize) -> Self {
        let cat = 2 * width;
        let branch = |i: usize| ConvBnRelu::same3(&format!("{name}.branch{i}"), cat, cat, 1);
        Self {
            name: name.to_string(),
            branches: [branch(1), branch(2), branch(3)],
            local: Bottleneck::new(&format!("{name}.local"), cat, reduction),
            global: Bottleneck::new(&format!("{name}.global"), cat, reduction),
            out: ConvBnRelu::same3(&format!("{name}.out"), 3 * cat, width, 1),
        }
    }

    pub fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        for b in &self.branches {
            b.init(store, rng);
        }
        self.local.init(store, rng);
        self.global.init(store, rng);
        self.out.init(store, rng);
    }

    pub fn trace<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, fa: Var, fb: Var) -> Result<CfmTrace> {
        let (sa, sb) = (ctx.shape(fa), ctx.shape(fb));
        if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
            return Err(Error::shape(format!("cfm: inputs {sa} and {sb} differ in batch or spatial size")));
        }
        ctx.scoped(&self.name, |ctx| {
            let cat = ctx.concat(&[fa, fb])?;
            let b1 = self.branches[0].forward(ctx, cat)?;
            let b2 = self.branches[1].forward(ctx, cat)?;
            let b3 = self.branches[2].forward(ctx, cat)?;

            let w_local = self.local.attention(ctx, b1)?;
            let pooled = ctx.global_avg_pool(b2)?;
            let w_global = self.global.attention(ctx, pooled)?;

            let l = ctx.mul(b1, w_local)?;
            let enhanced_local = ctx.add(l, b1)?;
            let g = ctx.mul(b2, w_global)?;
            let enhanced_global = ctx.add(g, b2)?;

            let fused = ctx.concat(&[enhanced_local, enhanced_global, b3])?;
            let output = self.out.forward(ctx, fused)?;
            Ok(CfmTrace { branches: [b1, b2, b3], w_local, w_global, enhanced_local, enhanced_global, output })
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, fa: Var, fb: Var) -> Result<Var> {
        Ok(self.trace(ctx, fa, fb)?.output)
    }
}

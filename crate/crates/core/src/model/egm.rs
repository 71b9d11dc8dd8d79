//! Edge-aware guidance: fuses two low-level features with the top-level one
//! into an edge feature and an edge logit map.

use rand::Rng;

use crate::autodiff::Var;
use crate::backbone::FeaturePyramid;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvBnRelu, Ctx};
use crate::params::ParamStore;
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Egm {
    pub proj_low: Conv2d,
    pub proj_high: Conv2d,
    pub fuse_low: ConvBnRelu,
    pub fuse_all: ConvBnRelu,
    pub edge_head: Conv2d,
}

impl Egm {
    pub fn new(c1: usize, c2: usize, c5: usize, width: usize) -> Self {
        Self {
            proj_low: Conv2d::pointwise("egm.proj2", c2, width),
            proj_high: Conv2d::pointwise("egm.proj5", c5, width),
            fuse_low: ConvBnRelu::same3("egm.fuse12", c1 + width, width, 1),
            fuse_all: ConvBnRelu::same3("egm.fuse", 2 * width, width, 1),
            edge_head: Conv2d::pointwise("egm.head", width, 1),
        }
    }

    pub fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        self.proj_low.init(store, rng);
        self.proj_high.init(store, rng);
        self.fuse_low.init(store, rng);
        self.fuse_all.init(store, rng);
        self.edge_head.init(store, rng);
    }

    /// Returns `(Fe, Se)`: the edge feature at F1's resolution and the edge
    /// logits resized to `(out_h, out_w)`.
    pub fn forward<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        pyramid: &FeaturePyramid,
        out_h: usize,
        out_w: usize,
    ) -> Result<(Var, Var)> {
        let (f1, f2, f5) = (pyramid.level(1), pyramid.level(2), pyramid.level(5));
        let n = ctx.shape(f1).n;
        if ctx.shape(f2).n != n || ctx.shape(f5).n != n {
            return Err(Error::shape("egm: pyramid levels disagree on batch size"));
        }
        ctx.scoped("egm", |ctx| {
            let p2 = self.proj_low.forward(ctx, f2)?;
            let p2 = ctx.resize_like(p2, f1)?;
            let f12 = ctx.concat(&[f1, p2])?;
            let f12 = self.fuse_low.forward(ctx, f12)?;
            let p5 = self.proj_high.forward(ctx, f5)?;
            let p5 = ctx.resize_like(p5, f1)?;
            let cat = ctx.concat(&[f12, p5])?;
            let fe = self.fuse_all.forward(ctx, cat)?;
            let se = self.edge_head.forward(ctx, fe)?;
            let se = ctx.resize(se, out_h, out_w)?;
            Ok((fe, se))
        })
    }
}

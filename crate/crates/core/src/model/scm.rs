//! Scale-aware convolution: parallel dilated 3x3 branches fused with a residual path.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::Result;
use crate::nn::{Conv2d, ConvBnRelu, Ctx};
use crate::params::ParamStore;
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scm {
    pub name: String,
    /// 1x1 projection feeding the dilated branches.
    pub split_dilated: Conv2d,
    /// 1x1 projection feeding the residual path.
    pub split_residual: Conv2d,
    pub branches: Vec<ConvBnRelu>,
    pub aggregate: ConvBnRelu,
    pub residual: ConvBnRelu,
    pub fuse: ConvBnRelu,
}

impl Scm {
    pub fn new(name: &str, cin: usize, width: usize, rates: &[usize]) -> Self {
        Self {
            name: name.to_string(),
            split_dilated: Conv2d::pointwise(format!("{name}.split1"), cin, width),
            split_residual: Conv2d::pointwise(format!("{name}.split2"), cin, width),
            branches: rates
                .iter()
                .enumerate()
                .map(|(l, &r)| ConvBnRelu::same3(&format!("{name}.branch{}", l + 1), width, width, r))
                .collect(),
            aggregate: ConvBnRelu::same3(&format!("{name}.aggregate"), rates.len() * width, width, 1),
            residual: ConvBnRelu::same3(&format!("{name}.residual"), width, width, 1),
            fuse: ConvBnRelu::same3(&format!("{name}.fuse"), width, width, 1),
        }
    }

    pub fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        self.split_dilated.init(store, rng);
        self.split_residual.init(store, rng);
        for b in &self.branches {
            b.init(store, rng);
        }
        self.aggregate.init(store, rng);
        self.residual.init(store, rng);
        self.fuse.init(store, rng);
    }

    /// Outputs of each dilated branch `E_l`, exposed for probing receptive fields.
    pub fn branch_outputs<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Vec<Var>> {
        let f1 = self.split_dilated.forward(ctx, x)?;
        self.branches.iter().map(|b| b.forward(ctx, f1)).collect()
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        ctx.scoped(&self.name, |ctx| {
            let branches = self.branch_outputs(ctx, x)?;
            let cat = ctx.concat(&branches)?;
            let agg = self.aggregate.forward(ctx, cat)?;
            let f2 = self.split_residual.forward(ctx, x)?;
            let res = self.residual.forward(ctx, f2)?;
            let sum = ctx.add(agg, res)?;
            self.fuse.forward(ctx, sum)
        })
    }
}

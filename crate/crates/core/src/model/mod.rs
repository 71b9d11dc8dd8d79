//! The segmentation network: encoder pyramid, per-level scale-aware
//! convolution, a top-down cascade of cross-level fusions, edge guidance and
//! four deeply supervised side outputs.

pub mod cfm;
pub mod egm;
pub mod loss;
pub mod scm;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, Mode, Var};
use crate::backbone::{check_input_size, BackboneConfig, Encoder, FeaturePyramid, ResidualBackbone, LEVELS};
use crate::cost::CostReport;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvBnRelu, Ctx};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Shape, Tensor};

pub use cfm::Cfm;
pub use egm::Egm;
pub use loss::{seg_loss, total_loss, LossBreakdown};
pub use scm::Scm;

pub const DEFAULT_DILATIONS: [usize; 3] = [2, 4, 8];

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Channel width shared by every SCM output, CFM input and the edge feature.
    pub common_width: usize,
    pub dilation_rates: [usize; 3],
    /// Channel reduction ratio of the attention bottlenecks; divides `2 * common_width`.
    pub cfm_reduction: usize,
    /// Weight of the edge loss in the total objective.
    pub beta_edge: f64,
    pub backbone: BackboneConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            common_width: 32,
            dilation_rates: DEFAULT_DILATIONS,
            cfm_reduction: 4,
            beta_edge: 5.0,
            backbone: BackboneConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.common_width == 0 {
            return Err(Error::Config("model.common_width must be positive".into()));
        }
        if self.cfm_reduction == 0 || !(2 * self.common_width).is_multiple_of(self.cfm_reduction) {
            return Err(Error::Config(format!(
                "model.cfm_reduction = {} must divide the fused width 2 * {} = {}",
                self.cfm_reduction,
                self.common_width,
                2 * self.common_width
            )));
        }
        if self.dilation_rates.contains(&0) {
            return Err(Error::Config("model.dilation_rates entries must be positive".into()));
        }
        if !(self.beta_edge.is_finite() && self.beta_edge >= 0.0) {
            return Err(Error::Config("model.beta_edge must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Side-output logits `S1..S4` and edge logits `Se` at input resolution, plus
/// the edge feature `Fe` at half resolution.
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    pub side: [Var; 4],
    pub edge: Var,
    pub edge_feature: Var,
}

impl ModelOutput {
    /// Final prediction logits (the finest side output).
    pub fn prediction(&self) -> Var {
        self.side[0]
    }
}

/// Two 3x3 conv-BN-ReLU layers and a 1x1 projection to one logit channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvBlock {
    pub name: String,
    pub first: ConvBnRelu,
    pub second: ConvBnRelu,
    pub logits: Conv2d,
}

impl ConvBlock {
    pub fn new(name: &str, width: usize) -> Self {
        Self {
            name: name.to_string(),
            first: ConvBnRelu::same3(&format!("{name}.conv1"), width, width, 1),
            second: ConvBnRelu::same3(&format!("{name}.conv2"), width, width, 1),
            logits: Conv2d::pointwise(format!("{name}.out"), width, 1),
        }
    }

    fn init<T: Scalar, R: rand::Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        self.first.init(store, rng);
        self.second.init(store, rng);
        self.logits.init(store, rng);
    }

    fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.first.forward(ctx, x)?;
        let y = self.second.forward(ctx, y)?;
        self.logits.forward(ctx, y)
    }
}

/// Edge-guided feature weighting with a residual connection.
///
/// `A = σ(proj(Fe))` is resized to the feature's resolution and broadcast
/// over channels; the output is `F ⊗ A ⊕ F`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeWeight {
    pub proj: Conv2d,
}

impl EdgeWeight {
    pub fn new(width: usize) -> Self {
        Self { proj: Conv2d::pointwise("decoder.edge_attention", width, 1) }
    }

    /// The single-channel attention map at the edge feature's resolution.
    pub fn attention<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, edge_feature: Var) -> Result<Var> {
        let a = self.proj.forward(ctx, edge_feature)?;
        Ok(ctx.sigmoid(a))
    }

    /// `F ⊗ resize(A) ⊕ F`.
    pub fn apply<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, feature: Var, attention: Var) -> Result<Var> {
        let a = ctx.resize_like(attention, feature)?;
        let weighted = ctx.mul(feature, a)?;
        ctx.add(weighted, feature)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EfaNet<E = ResidualBackbone> {
    pub config: ModelConfig,
    pub encoder: E,
    pub scms: Vec<Scm>,
    /// `cfms[i]` produces the fused feature at level `i + 1`.
    pub cfms: Vec<Cfm>,
    pub egm: Egm,
    pub edge_weight: EdgeWeight,
    pub heads: Vec<ConvBlock>,
}

impl EfaNet<ResidualBackbone> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let encoder = ResidualBackbone::new(config.backbone.clone())?;
        Self::with_encoder(config, encoder)
    }
}

impl<E: Encoder> EfaNet<E> {
    pub fn with_encoder(config: ModelConfig, encoder: E) -> Result<Self> {
        config.validate()?;
        let k = config.common_width;
        let ch = encoder.level_channels();
        Ok(Self {
            scms: (0..LEVELS).map(|i| Scm::new(&format!("scm{}", i + 1), ch[i], k, &config.dilation_rates)).collect(),
            cfms: (0..LEVELS - 1).map(|i| Cfm::new(&format!("cfm{}", i + 1), k, config.cfm_reduction)).collect(),
            egm: Egm::new(ch[0], ch[1], ch[4], k),
            edge_weight: EdgeWeight::new(k),
            heads: (0..LEVELS - 1).map(|i| ConvBlock::new(&format!("head{}", i + 1), k)).collect(),
            encoder,
            config,
        })
    }

    /// Fresh parameters, reproducible from `seed`.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.encoder.init(&mut store, &mut rng);
        for m in &self.scms {
            m.init(&mut store, &mut rng);
        }
        for m in &self.cfms {
            m.init(&mut store, &mut rng);
        }
        self.egm.init(&mut store, &mut rng);
        self.edge_weight.proj.init(&mut store, &mut rng);
        for h in &self.heads {
            h.init(&mut store, &mut rng);
        }
        store
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<ModelOutput> {
        let s = ctx.shape(image);
        let pyramid = self.encoder.extract(ctx, image)?;
        self.decode(ctx, &pyramid, s.h, s.w)
    }

    fn decode<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, pyramid: &FeaturePyramid, h: usize, w: usize) -> Result<ModelOutput> {
        let mut scaled = Vec::with_capacity(LEVELS);
        for (i, scm) in self.scms.iter().enumerate() {
            scaled.push(scm.forward(ctx, pyramid.levels[i])?);
        }

        // top-down cascade: D5 = T5, D_i = CFM(Up(D_{i+1}), T_i)
        let mut fused = [scaled[LEVELS - 1]; LEVELS];
        for i in (0..LEVELS - 1).rev() {
            let name = self.cfms[i].name.clone();
            let up = ctx.scoped(&name, |ctx| ctx.resize_like(fused[i + 1], scaled[i]))?;
            fused[i] = self.cfms[i].forward(ctx, up, scaled[i])?;
        }

        let (edge_feature, edge) = self.egm.forward(ctx, pyramid, h, w)?;

        let attention = ctx.scoped("heads", |ctx| self.edge_weight.attention(ctx, edge_feature))?;
        let mut side = [edge; 4];
        for (i, head) in self.heads.iter().enumerate() {
            side[i] = ctx.scoped(&head.name, |ctx| {
                let f = self.edge_weight.apply(ctx, fused[i], attention)?;
                let logits = head.forward(ctx, f)?;
                ctx.resize(logits, h, w)
            })?;
        }
        Ok(ModelOutput { side, edge, edge_feature })
    }

    /// Per-layer parameter and FLOP counts for one `height x width` image.
    pub fn analyze(&self, height: usize, width: usize) -> Result<CostReport> {
        check_input_size(height, width)?;
        let params = self.init_params::<f32>(0);
        let mut ctx = Ctx::costing(&params);
        let x = ctx.input(Tensor::zeros(Shape::new(1, self.encoder.input_channels(), height, width)));
        self.forward(&mut ctx, x)?;
        Ok(ctx.into_cost_report(height, width))
    }

    /// One optimization step on a batch: train-mode forward, loss, backward,
    /// batch-norm running-stat update and an Adam step. A non-finite loss
    /// aborts before any parameter or buffer is modified.
    pub fn train_step<T: Scalar>(
        &self,
        params: &mut ParamStore<T>,
        adam: &mut Adam<T>,
        images: Tensor<T>,
        masks: &Tensor<T>,
        edges: &Tensor<T>,
    ) -> Result<LossBreakdown> {
        let mut ctx = Ctx::new(params, Mode::Train);
        let x = ctx.input(images);
        let out = self.forward(&mut ctx, x)?;
        let (loss, breakdown) = total_loss(&mut ctx, &out, masks, edges, self.config.beta_edge)?;
        if !breakdown.total.is_finite() {
            return Err(Error::NonFinite(format!("training loss is {}", breakdown.total)));
        }
        ctx.tape.backward(loss)?;
        let mut pass = ctx.finish();
        pass.collect_grads(params)?;
        pass.apply_bn_updates(params)?;
        adam.step(params)?;
        Ok(breakdown)
    }

    /// Eval-mode probability map `σ(S1)` for a batch of images.
    pub fn predict<T: Scalar>(&self, params: &ParamStore<T>, images: Tensor<T>) -> Result<Tensor<T>> {
        let mut ctx = Ctx::new(params, Mode::Eval);
        let x = ctx.input(images);
        let out = self.forward(&mut ctx, x)?;
        let p = ctx.sigmoid(out.prediction());
        Ok(ctx.value(p).clone())
    }
}

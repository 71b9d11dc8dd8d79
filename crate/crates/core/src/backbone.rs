//! Multi-level feature extractor producing the five-level pyramid.
//!
//! The default encoder is a small residual CNN: a stride-2 stem, then five
//! levels, each opening with a 3x3 transition conv (stride 1 for the first
//! level, stride 2 afterwards) followed by residual blocks. Level `i` has
//! stride `2^i` relative to the input.

use rand::Rng;

use crate::autodiff::{ConvGeom, Var};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, ConvBnRelu, Ctx};
use crate::params::ParamStore;
use crate::tensor::Scalar;

pub const LEVELS: usize = 5;
/// Input height and width must be multiples of this.
pub const TOTAL_STRIDE: usize = 1 << LEVELS;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub input_channels: usize,
    pub stem_channels: usize,
    pub channels_per_level: [usize; LEVELS],
    pub blocks_per_level: [usize; LEVELS],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self { input_channels: 1, stem_channels: 16, channels_per_level: [16, 24, 32, 48, 64], blocks_per_level: [1; LEVELS] }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.stem_channels == 0 {
            return Err(Error::Config("backbone input and stem channels must be positive".into()));
        }
        if let Some(i) = self.channels_per_level.iter().position(|&c| c == 0) {
            return Err(Error::Config(format!("backbone level {} has zero channels", i + 1)));
        }
        Ok(())
    }
}

/// Backbone activations `F1..F5` at strides 2, 4, 8, 16, 32.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeaturePyramid {
    pub levels: [Var; LEVELS],
}

impl FeaturePyramid {
    /// Level `i` in `1..=5`.
    pub fn level(&self, i: usize) -> Var {
        self.levels[i - 1]
    }
}

/// Anything that can produce a five-level pyramid with fixed strides.
pub trait Encoder {
    fn level_channels(&self) -> [usize; LEVELS];
    fn input_channels(&self) -> usize;
    fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R);
    fn extract<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<FeaturePyramid>;
}

/// Checks the spatial contract shared by every encoder.
pub fn check_input_size(h: usize, w: usize) -> Result<()> {
    if h < TOTAL_STRIDE || w < TOTAL_STRIDE || !h.is_multiple_of(TOTAL_STRIDE) || !w.is_multiple_of(TOTAL_STRIDE) {
        return Err(Error::shape(format!(
            "input size {h}x{w} is invalid: height and width must be positive multiples of {TOTAL_STRIDE}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct ResidualBlock {
    first: ConvBnRelu,
    second: Conv2d,
    second_bn: BatchNorm2d,
}

impl ResidualBlock {
    fn new(name: &str, channels: usize) -> Self {
        Self {
            first: ConvBnRelu::same3(&format!("{name}.conv1"), channels, channels, 1),
            second: Conv2d::new(format!("{name}.conv2.conv"), channels, channels, 3, ConvGeom::same(3, 1)),
            second_bn: BatchNorm2d::new(format!("{name}.conv2.bn"), channels),
        }
    }

    fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        self.first.init(store, rng);
        self.second.init(store, rng);
        self.second_bn.init(store);
    }

    fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.first.forward(ctx, x)?;
        let y = self.second.forward(ctx, y)?;
        let y = self.second_bn.forward(ctx, y)?;
        let y = ctx.add(y, x)?;
        Ok(ctx.relu(y))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Level {
    transition: ConvBnRelu,
    blocks: Vec<ResidualBlock>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResidualBackbone {
    config: BackboneConfig,
    stem: ConvBnRelu,
    levels: Vec<Level>,
}

impl ResidualBackbone {
    pub fn new(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let stem = ConvBnRelu::new("backbone.stem", config.input_channels, config.stem_channels, 3, ConvGeom::new(2, 1, 1));
        let mut prev = config.stem_channels;
        let mut levels = Vec::with_capacity(LEVELS);
        for (i, (&c, &blocks)) in config.channels_per_level.iter().zip(&config.blocks_per_level).enumerate() {
            let name = format!("backbone.level{}", i + 1);
            let stride = if i == 0 { 1 } else { 2 };
            levels.push(Level {
                transition: ConvBnRelu::new(&format!("{name}.down"), prev, c, 3, ConvGeom::new(stride, 1, 1)),
                blocks: (0..blocks).map(|b| ResidualBlock::new(&format!("{name}.block{b}"), c)).collect(),
            });
            prev = c;
        }
        Ok(Self { config, stem, levels })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }
}

impl Encoder for ResidualBackbone {
    fn level_channels(&self) -> [usize; LEVELS] {
        self.config.channels_per_level
    }

    fn input_channels(&self) -> usize {
        self.config.input_channels
    }

    fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        self.stem.init(store, rng);
        for level in &self.levels {
            level.transition.init(store, rng);
            for b in &level.blocks {
                b.init(store, rng);
            }
        }
    }

    fn extract<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<FeaturePyramid> {
        let s = ctx.shape(image);
        if s.c != self.config.input_channels {
            return Err(Error::shape(format!(
                "backbone expects {} input channels, got {} (input {s})",
                self.config.input_channels, s.c
            )));
        }
        check_input_size(s.h, s.w)?;
        ctx.scoped("backbone", |ctx| {
            let mut x = self.stem.forward(ctx, image)?;
            let mut out = Vec::with_capacity(LEVELS);
            for level in &self.levels {
                x = level.transition.forward(ctx, x)?;
                for b in &level.blocks {
                    x = b.forward(ctx, x)?;
                }
                out.push(x);
            }
            Ok(FeaturePyramid { levels: out.try_into().expect("five levels") })
        })
    }
}

pub mod autodiff;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod cost;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod tensor;

pub use autodiff::{Mode, Tape, Var};
pub use backbone::{BackboneConfig, FeaturePyramid, ResidualBackbone};
pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use cost::CostReport;
pub use data::{DatasetManifest, SegSample};
pub use error::{Error, Result};
pub use metrics::{CurveSet, MetricReport};
pub use model::{EfaNet, LossBreakdown, ModelConfig, ModelOutput};
pub use params::ParamStore;
pub use tensor::{Scalar, Shape, Tensor};

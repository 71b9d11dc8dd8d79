//! Segmentation evaluation: Dice, IoU, S-measure, weighted F-measure, mean
//! E-measure, precision/recall curves and scale-bucket aggregation.
//!
//! Prediction maps are flat row-major `f64` slices in `[0, 1]`; ground truths
//! are `{0, 1}` bytes of the same length.

pub mod counting;
pub mod report;
pub mod structure;
pub mod weighted;

pub use counting::{dice_iou, e_measure_mean, pr_curves, CurveSet, THRESHOLDS};
pub use report::{evaluate_image, scale_bucket_report, BucketSummary, ImageRecord, MetricConfig, MetricMeans, MetricReport};
pub use structure::s_measure;
pub use weighted::{distance_transform, weighted_fmeasure};

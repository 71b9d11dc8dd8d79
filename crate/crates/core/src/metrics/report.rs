//! Per-image records, dataset aggregates and the scale-bucket breakdown.

use crate::data::{polyp_scale_ratio, Mask, ScaleBucket};
use crate::error::{Error, Result};

use super::counting::{dice_iou, e_measure_mean, THRESHOLDS};
use super::structure::{s_measure, DEFAULT_S_ALPHA};
use super::weighted::{weighted_fmeasure, DEFAULT_WFM_BETA2};

pub const DEFAULT_CURVE_BETA2: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricConfig {
    /// Binarization threshold for Dice and IoU.
    pub threshold: f64,
    pub s_alpha: f64,
    pub wfm_beta2: f64,
    pub curve_beta2: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { threshold: 0.5, s_alpha: DEFAULT_S_ALPHA, wfm_beta2: DEFAULT_WFM_BETA2, curve_beta2: DEFAULT_CURVE_BETA2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub dice: f64,
    pub iou: f64,
    pub s_alpha: f64,
    pub f_w: f64,
    pub e_mean: f64,
    pub ratio: f64,
    pub bucket: ScaleBucket,
}

/// All five metrics for one prediction map against its mask. An empty mask
/// scores a weighted F-measure of 0.
pub fn evaluate_image(id: &str, pred: &[f64], gt: &Mask, config: &MetricConfig) -> Result<ImageRecord> {
    let (h, w) = (gt.height, gt.width);
    let (dice, iou) = dice_iou(pred, &gt.data, config.threshold)?;
    let f_w = match weighted_fmeasure(pred, &gt.data, h, w, config.wfm_beta2) {
        Err(Error::Undefined(_)) => 0.0,
        other => other?,
    };
    let (ratio, bucket) = polyp_scale_ratio(gt);
    Ok(ImageRecord {
        id: id.to_string(),
        dice,
        iou,
        s_alpha: s_measure(pred, &gt.data, h, w, config.s_alpha)?,
        f_w,
        e_mean: e_measure_mean(pred, &gt.data)?,
        ratio,
        bucket,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricMeans {
    pub dice: f64,
    pub iou: f64,
    pub s_alpha: f64,
    pub f_w: f64,
    pub e_mean: f64,
}

impl MetricMeans {
    /// Arithmetic means; all zero for an empty set.
    pub fn of<'a>(records: impl IntoIterator<Item = &'a ImageRecord>) -> (Self, usize) {
        let mut m = Self::default();
        let mut n = 0usize;
        for r in records {
            m.dice += r.dice;
            m.iou += r.iou;
            m.s_alpha += r.s_alpha;
            m.f_w += r.f_w;
            m.e_mean += r.e_mean;
            n += 1;
        }
        if n > 0 {
            let k = n as f64;
            m = Self { dice: m.dice / k, iou: m.iou / k, s_alpha: m.s_alpha / k, f_w: m.f_w / k, e_mean: m.e_mean / k };
        }
        (m, n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BucketSummary {
    pub bucket: ScaleBucket,
    pub count: usize,
    pub share: f64,
    pub means: MetricMeans,
}

/// Means per scale bucket; empty buckets report count 0 and zero means.
pub fn scale_bucket_report(records: &[ImageRecord]) -> [BucketSummary; 3] {
    ScaleBucket::ALL.map(|bucket| {
        let (means, count) = MetricMeans::of(records.iter().filter(|r| r.bucket == bucket));
        let share = if records.is_empty() { 0.0 } else { count as f64 / records.len() as f64 };
        BucketSummary { bucket, count, share, means }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub config: MetricConfig,
    pub records: Vec<ImageRecord>,
}

impl MetricReport {
    pub fn new(config: MetricConfig, records: Vec<ImageRecord>) -> Self {
        Self { config, records }
    }

    pub fn means(&self) -> MetricMeans {
        MetricMeans::of(&self.records).0
    }

    pub fn buckets(&self) -> [BucketSummary; 3] {
        scale_bucket_report(&self.records)
    }

    /// One row per image followed by `#mean` and `#bucket:<name>` rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tdice\tiou\ts_alpha\tf_w\te_mean\tratio\tbucket\n");
        for r in &self.records {
            out += &format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
                r.id, r.dice, r.iou, r.s_alpha, r.f_w, r.e_mean, r.ratio, r.bucket
            );
        }
        let row = |label: &str, m: &MetricMeans, n: usize| {
            format!("{label}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t\t{n}\n", m.dice, m.iou, m.s_alpha, m.f_w, m.e_mean)
        };
        out += &row("#mean", &self.means(), self.records.len());
        for b in self.buckets() {
            out += &row(&format!("#bucket:{}", b.bucket), &b.means, b.count);
        }
        out
    }

    /// `key = value` summary including the conventions used.
    pub fn summary(&self) -> String {
        let m = self.means();
        let c = &self.config;
        let mut out = format!(
            "images = {}\nthreshold = {}\ns_alpha = {}\nwfm_beta2 = {}\ncurve_beta2 = {}\ncurve_thresholds = {THRESHOLDS}\n\
             empty_prediction_precision = 1\nempty_gt_weighted_f = 0\n\
             mean.dice = {:.6}\nmean.iou = {:.6}\nmean.s_alpha = {:.6}\nmean.f_w = {:.6}\nmean.e_mean = {:.6}\n",
            self.records.len(),
            c.threshold,
            c.s_alpha,
            c.wfm_beta2,
            c.curve_beta2,
            m.dice,
            m.iou,
            m.s_alpha,
            m.f_w,
            m.e_mean
        );
        for b in self.buckets() {
            let k = b.bucket;
            out += &format!(
                "bucket.{k}.count = {}\nbucket.{k}.share = {:.6}\nbucket.{k}.dice = {:.6}\nbucket.{k}.iou = {:.6}\nbucket.{k}.s_alpha = {:.6}\n",
                b.count, b.share, b.means.dice, b.means.iou, b.means.s_alpha
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(dice: f64, bucket: ScaleBucket) -> ImageRecord {
        ImageRecord { id: "x".into(), dice, iou: dice, s_alpha: dice, f_w: dice, e_mean: dice, ratio: 0.1, bucket }
    }

    #[test]
    fn single_bucket_leaves_others_empty_without_nan() {
        let b = scale_bucket_report(&[rec(0.8, ScaleBucket::Medium)]);
        assert_eq!(b[0].count, 0);
        assert_eq!(b[0].means, MetricMeans::default());
        assert_eq!(b[1].share, 1.0);
        assert!(b.iter().all(|s| s.means.dice.is_finite()));
    }

    #[test]
    fn bucket_means_and_overall() {
        let report = MetricReport::new(MetricConfig::default(), vec![rec(1.0, ScaleBucket::Small), rec(0.5, ScaleBucket::Large)]);
        let b = report.buckets();
        assert_eq!((b[0].means.dice, b[2].means.dice), (1.0, 0.5));
        assert_eq!(report.means().dice, 0.75);
        assert_eq!(b.iter().map(|s| s.count).sum::<usize>(), 2);
        assert_eq!(report.to_tsv().lines().count(), 1 + 2 + 1 + 3);
        assert!(report.summary().contains("bucket.large.dice = 0.500000"));
    }

    #[test]
    fn empty_mask_evaluates_with_fallback() {
        let gt = Mask::new(1, 4, 4);
        let r = evaluate_image("e", &[0.0; 16], &gt, &MetricConfig::default()).unwrap();
        assert_eq!((r.dice, r.iou, r.f_w), (1.0, 1.0, 0.0));
        assert_eq!(r.bucket, ScaleBucket::Small);
    }
}

//! Threshold-counting metrics: Dice, IoU, E-measure and precision/recall curves.

use crate::error::{Error, Result};

pub const THRESHOLDS: usize = 256;

pub(crate) fn check_pair(pred: &[f64], gt: &[u8]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!("prediction has {} pixels, ground truth {}", pred.len(), gt.len())));
    }
    if let Some(&v) = gt.iter().find(|&&v| v > 1) {
        return Err(Error::invalid(format!("ground truth must be binary, found {v}")));
    }
    if let Some(&v) = pred.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("prediction values must lie in [0, 1], found {v}")));
    }
    Ok(())
}

/// `(dice, iou)` of `[P >= threshold]` against `G`; both are 1 when both are empty.
pub fn dice_iou(pred: &[f64], gt: &[u8], threshold: f64) -> Result<(f64, f64)> {
    check_pair(pred, gt)?;
    let (mut inter, mut b, mut g) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(gt) {
        let on = p >= threshold;
        b += on as usize;
        g += t as usize;
        inter += (on && t == 1) as usize;
    }
    if b + g == 0 {
        return Ok((1.0, 1.0));
    }
    let union = b + g - inter;
    Ok((2.0 * inter as f64 / (b + g) as f64, inter as f64 / union as f64))
}

/// Largest `i` with `p >= i / 255`.
fn top_level(p: f64) -> usize {
    let mut i = ((p * 255.0).floor() as isize).clamp(0, 255) as usize;
    while i < 255 && p >= (i + 1) as f64 / 255.0 {
        i += 1;
    }
    while i > 0 && p < i as f64 / 255.0 {
        i -= 1;
    }
    i
}

/// Per-threshold counts of predicted-foreground pixels on `G = 1` (`tp`) and
/// on `G = 0` (`fp`) for `τ = i / 255`.
pub(crate) struct ThresholdCounts {
    pub tp: [usize; THRESHOLDS],
    pub fp: [usize; THRESHOLDS],
    pub positives: usize,
    pub total: usize,
}

impl ThresholdCounts {
    pub fn new(pred: &[f64], gt: &[u8]) -> Self {
        let mut hist_fg = [0usize; THRESHOLDS];
        let mut hist_bg = [0usize; THRESHOLDS];
        for (&p, &t) in pred.iter().zip(gt) {
            let i = top_level(p);
            if t == 1 {
                hist_fg[i] += 1;
            } else {
                hist_bg[i] += 1;
            }
        }
        // P >= τ_i holds for every pixel whose top level is at least i
        let (mut tp, mut fp) = ([0usize; THRESHOLDS], [0usize; THRESHOLDS]);
        let (mut a, mut b) = (0, 0);
        for i in (0..THRESHOLDS).rev() {
            a += hist_fg[i];
            b += hist_bg[i];
            tp[i] = a;
            fp[i] = b;
        }
        Self { tp, fp, positives: gt.iter().filter(|&&t| t == 1).count(), total: gt.len() }
    }
}

/// Enhanced-alignment score of one binarization given its confusion counts.
fn enhanced_alignment(tp: usize, fp: usize, positives: usize, total: usize) -> f64 {
    let n = total as f64;
    let predicted = (tp + fp) as f64;
    let sum = if positives == 0 {
        n - predicted
    } else if positives == total {
        predicted
    } else {
        let fn_ = positives - tp;
        let tn = total - positives - fp;
        let mp = predicted / n;
        let mg = positives as f64 / n;
        let parts = [
            (tp, 1.0 - mp, 1.0 - mg),
            (fp, 1.0 - mp, -mg),
            (fn_, -mp, 1.0 - mg),
            (tn, -mp, -mg),
        ];
        parts
            .iter()
            .map(|&(count, a, b)| {
                let align = 2.0 * a * b / (a * a + b * b + f64::EPSILON);
                (align + 1.0).powi(2) / 4.0 * count as f64
            })
            .sum()
    };
    sum / n
}

/// Enhanced-alignment measure averaged over the 256 thresholds `i / 255`.
pub fn e_measure_mean(pred: &[f64], gt: &[u8]) -> Result<f64> {
    check_pair(pred, gt)?;
    if gt.is_empty() {
        return Err(Error::invalid("E-measure of an empty map"));
    }
    Ok(e_measure_curve(&ThresholdCounts::new(pred, gt)).iter().sum::<f64>() / THRESHOLDS as f64)
}

pub(crate) fn e_measure_curve(c: &ThresholdCounts) -> [f64; THRESHOLDS] {
    std::array::from_fn(|i| enhanced_alignment(c.tp[i], c.fp[i], c.positives, c.total))
}

/// Dataset-averaged precision, recall and F-measure at 256 thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveSet {
    pub beta2: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub fmeasure: Vec<f64>,
}

pub fn threshold(i: usize) -> f64 {
    i as f64 / 255.0
}

impl CurveSet {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("threshold\tprecision\trecall\tf_measure\n");
        for i in 0..THRESHOLDS {
            out += &format!("{:.6}\t{:.6}\t{:.6}\t{:.6}\n", threshold(i), self.precision[i], self.recall[i], self.fmeasure[i]);
        }
        out
    }

    pub fn max_f(&self) -> f64 {
        self.fmeasure.iter().copied().fold(0.0, f64::max)
    }
}

/// Per-image precision (1 when nothing is predicted) and recall (1 when `G`
/// is empty) averaged over the dataset; `F` is taken from the averaged curves.
pub fn pr_curves<'a>(samples: impl IntoIterator<Item = (&'a [f64], &'a [u8])>, beta2: f64) -> Result<CurveSet> {
    let mut precision = vec![0.0; THRESHOLDS];
    let mut recall = vec![0.0; THRESHOLDS];
    let mut n = 0usize;
    for (pred, gt) in samples {
        check_pair(pred, gt)?;
        let c = ThresholdCounts::new(pred, gt);
        for i in 0..THRESHOLDS {
            let predicted = c.tp[i] + c.fp[i];
            precision[i] += if predicted == 0 { 1.0 } else { c.tp[i] as f64 / predicted as f64 };
            recall[i] += if c.positives == 0 { 1.0 } else { c.tp[i] as f64 / c.positives as f64 };
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("precision-recall curves need at least one sample"));
    }
    for v in precision.iter_mut().chain(recall.iter_mut()) {
        *v /= n as f64;
    }
    let fmeasure = precision
        .iter()
        .zip(&recall)
        .map(|(&p, &r)| {
            let d = beta2 * p + r;
            if d > 0.0 {
                (1.0 + beta2) * p * r / d
            } else {
                0.0
            }
        })
        .collect();
    Ok(CurveSet { beta2, precision, recall, fmeasure })
}

//! Training-time augmentation and multi-scale rescaling.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::backbone::TOTAL_STRIDE;
use crate::error::{Error, Result};

use super::edges::DEFAULT_EDGE_RADIUS;
use super::SegSample;

#[derive(Clone, Debug, PartialEq)]
pub struct AugConfig {
    /// Probability of each of the horizontal and vertical flips.
    pub flip_prob: f64,
    /// Rotation angles in degrees, one drawn uniformly per sample. Multiples
    /// of 90 are exact; other angles interpolate.
    pub rotations: Vec<f64>,
    /// Side fraction range of the random crop, which is resized back.
    pub crop_range: (f64, f64),
    pub scale_ratios: Vec<f64>,
    pub target_size: usize,
    pub edge_radius: usize,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            rotations: vec![0.0, 90.0, 180.0, 270.0],
            crop_range: (0.8, 1.0),
            scale_ratios: vec![0.75, 1.0, 1.25],
            target_size: 64,
            edge_radius: DEFAULT_EDGE_RADIUS,
        }
    }
}

impl AugConfig {
    /// No geometric change at all; only the base size is kept.
    pub fn identity(target_size: usize) -> Self {
        Self { flip_prob: 0.0, rotations: vec![0.0], crop_range: (1.0, 1.0), scale_ratios: vec![1.0], target_size, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("aug.flip_prob = {} must lie in [0, 1]", self.flip_prob));
        }
        let (lo, hi) = self.crop_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("aug.crop_range = ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"));
        }
        if self.rotations.is_empty() || self.rotations.iter().any(|r| !r.is_finite()) {
            return bad("aug.rotations must be a non-empty list of finite angles".into());
        }
        if self.scale_ratios.is_empty() || self.scale_ratios.iter().any(|&r| !(r.is_finite() && r > 0.0)) {
            return bad("aug.scale_ratios must be a non-empty list of positive numbers".into());
        }
        if self.target_size == 0 || !self.target_size.is_multiple_of(TOTAL_STRIDE) {
            return bad(format!("aug.target_size = {} must be a positive multiple of {TOTAL_STRIDE}", self.target_size));
        }
        Ok(())
    }

    /// Every training size reachable from the scale ratios.
    pub fn training_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.scale_ratios.iter().map(|&r| scaled_size(self.target_size, r)).collect();
        sizes.sort_unstable();
        sizes.dedup();
        sizes
    }
}

/// `ratio * base` rounded to the nearest multiple of 32 (at least 32); exact
/// ties round away from `base`, so a non-unit ratio never collapses onto it.
pub fn scaled_size(base: usize, ratio: f64) -> usize {
    let stride = TOTAL_STRIDE as f64;
    let q = base as f64 * ratio / stride;
    let (lo, hi) = (q.floor(), q.ceil());
    let pick = if q - lo < hi - q {
        lo
    } else if q - lo > hi - q {
        hi
    } else if (lo * stride - base as f64).abs() >= (hi * stride - base as f64).abs() {
        lo
    } else {
        hi
    };
    (pick.max(1.0) as usize) * TOTAL_STRIDE
}

/// Resizes the sample to `size x size` (bilinear image, nearest mask) and
/// regenerates the edge target.
pub fn rescale(sample: &SegSample, size: usize, edge_radius: usize) -> Result<SegSample> {
    if size == 0 || !size.is_multiple_of(TOTAL_STRIDE) {
        return Err(Error::invalid(format!("rescale target {size} is not a positive multiple of {TOTAL_STRIDE}")));
    }
    if sample.size() == (size, size) {
        return Ok(sample.clone());
    }
    let image = sample.image.resize_bilinear(size, size);
    let mask = sample.mask.resize_nearest(size, size);
    SegSample::new(sample.id.clone(), image, mask, edge_radius)
}

/// Random flips, rotation and crop applied identically to image and mask;
/// the edge target is rebuilt from the transformed mask. Output size equals
/// input size for square inputs.
pub fn augment<R: Rng>(sample: &SegSample, rng: &mut R, config: &AugConfig) -> Result<SegSample> {
    let (mut image, mut mask) = (sample.image.clone(), sample.mask.clone());
    if rng.gen_bool(config.flip_prob) {
        image = image.flip_horizontal();
        mask = mask.flip_horizontal();
    }
    if rng.gen_bool(config.flip_prob) {
        image = image.flip_vertical();
        mask = mask.flip_vertical();
    }
    let angle = *config.rotations.choose(rng).expect("validated non-empty");
    let turns = angle / 90.0;
    if turns.fract() == 0.0 {
        let q = turns.rem_euclid(4.0) as u32;
        image = image.rotate90(q);
        mask = mask.rotate90(q);
    } else {
        image = image.rotate_bilinear(angle);
        mask = mask.rotate_nearest(angle);
    }
    let (lo, hi) = config.crop_range;
    let frac = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    if frac < 1.0 {
        let (h, w) = (mask.height, mask.width);
        let ch = ((h as f64 * frac).round() as usize).clamp(1, h);
        let cw = ((w as f64 * frac).round() as usize).clamp(1, w);
        let top = rng.gen_range(0..=h - ch);
        let left = rng.gen_range(0..=w - cw);
        image = image.crop(top, left, ch, cw)?.resize_bilinear(h, w);
        mask = mask.crop(top, left, ch, cw)?.resize_nearest(h, w);
    }
    SegSample::new(sample.id.clone(), image, mask, config.edge_radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::edges::sobel_edge_gt;
    use crate::data::raster::{Image, Mask};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blob(size: usize, cy: f64, cx: f64, r: f64) -> SegSample {
        let mut m = Mask::new(1, size, size);
        let mut img = Image::new(1, size, size);
        for y in 0..size {
            for x in 0..size {
                let inside = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r;
                m.set(0, y, x, inside as u8);
                img.set(0, y, x, if inside { 0.8 } else { 0.2 } + 0.001 * x as f32);
            }
        }
        SegSample::new("b", img, m, 1).unwrap()
    }

    fn centroid(m: &Mask) -> (f64, f64) {
        let (mut sy, mut sx, mut n) = (0.0, 0.0, 0.0);
        for y in 0..m.height {
            for x in 0..m.width {
                if m.get(0, y, x) != 0 {
                    sy += y as f64;
                    sx += x as f64;
                    n += 1.0;
                }
            }
        }
        (sy / n, sx / n)
    }

    #[test]
    fn scaled_sizes_round_to_stride_with_ties_away_from_base() {
        assert_eq!(scaled_size(64, 0.75), 32);
        assert_eq!(scaled_size(64, 1.0), 64);
        assert_eq!(scaled_size(64, 1.25), 96);
        assert_eq!(scaled_size(352, 0.75), 256);
        assert_eq!(scaled_size(352, 1.25), 448);
        assert_eq!(scaled_size(32, 0.1), 32);
        assert_eq!(AugConfig::default().training_sizes(), vec![32, 64, 96]);
    }

    #[test]
    fn identity_config_is_geometric_identity() {
        let s = blob(32, 10.0, 20.0, 6.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(augment(&s, &mut rng, &AugConfig::identity(32)).unwrap(), s);
    }

    #[test]
    fn quarter_turn_moves_centroid_about_centre() {
        let s = blob(32, 8.0, 20.0, 5.0);
        let cfg = AugConfig { rotations: vec![90.0], ..AugConfig::identity(32) };
        let out = augment(&s, &mut ChaCha8Rng::seed_from_u64(0), &cfg).unwrap();
        let (y0, x0) = centroid(&s.mask);
        let (y1, x1) = centroid(&out.mask);
        let c = 15.5;
        // counter-clockwise as displayed: (dy, dx) -> (-dx, dy)
        assert!((y1 - (c - (x0 - c))).abs() <= 1.0, "{y1}");
        assert!((x1 - (c + (y0 - c))).abs() <= 1.0, "{x1}");
        assert_eq!(out.mask.count_ones(), s.mask.count_ones());
    }

    #[test]
    fn augmented_edges_match_augmented_mask() {
        let s = blob(64, 30.0, 25.0, 12.0);
        let cfg = AugConfig { rotations: vec![0.0, 33.0, 90.0], ..AugConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let out = augment(&s, &mut rng, &cfg).unwrap();
            assert_eq!(out.edges, sobel_edge_gt(&out.mask, cfg.edge_radius).unwrap());
            assert!(out.mask.data.iter().all(|&v| v <= 1));
            assert_eq!(out.size(), (64, 64));
        }
    }

    #[test]
    fn rescale_identity_and_area_halving() {
        let s = blob(64, 32.0, 32.0, 16.0);
        assert_eq!(rescale(&s, 64, 1).unwrap(), s);
        let small = rescale(&s, 32, 1).unwrap();
        let (a0, a1) = (s.mask.count_ones() as f64, small.mask.count_ones() as f64);
        // area scales by 1/4; the tolerance is one boundary ring at the new scale
        let ring = 2.0 * std::f64::consts::PI * 8.0;
        assert!((a1 - a0 / 4.0).abs() <= ring, "{a0} -> {a1}");
        assert!(rescale(&s, 48, 1).is_err());
    }

    #[test]
    fn up_down_round_trip_keeps_large_blobs() {
        let s = blob(64, 30.0, 33.0, 9.0);
        let back = rescale(&rescale(&s, 96, 1).unwrap(), 64, 1).unwrap();
        let inter = s.mask.data.iter().zip(&back.mask.data).filter(|(a, b)| **a & **b == 1).count() as f64;
        let union = s.mask.data.iter().zip(&back.mask.data).filter(|(a, b)| **a | **b == 1).count() as f64;
        assert!(inter / union >= 0.9);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(AugConfig { flip_prob: 1.5, ..AugConfig::default() }.validate().is_err());
        assert!(AugConfig { crop_range: (0.0, 1.0), ..AugConfig::default() }.validate().is_err());
        assert!(AugConfig { target_size: 50, ..AugConfig::default() }.validate().is_err());
        assert!(AugConfig { scale_ratios: vec![-1.0], ..AugConfig::default() }.validate().is_err());
        AugConfig::default().validate().unwrap();
    }
}

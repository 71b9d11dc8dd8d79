//! Synthetic polyp-like dataset: textured background with one to three
//! smoothly perturbed elliptical blobs of controlled total area.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::backbone::TOTAL_STRIDE;
use crate::error::{Error, Result};

use super::io::{self, DatasetManifest, ManifestRecord};
use super::raster::{Image, Mask};
use super::{polyp_scale_ratio, ScaleBucket, SegSample, DEFAULT_EDGE_RADIUS};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub size: usize,
    /// Sampling probabilities of the small, medium and large buckets.
    pub bucket_probs: [f64; 3],
    /// Minimum mean-intensity gap between blob and background.
    pub contrast: f64,
    pub noise_sigma: f64,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { size: 64, bucket_probs: [0.3, 0.45, 0.25], contrast: 0.25, noise_sigma: 0.03, test_fraction: 0.2 }
    }
}

/// Total foreground ratio drawn for each bucket, kept clear of the thresholds.
fn ratio_range(bucket: ScaleBucket) -> (f64, f64) {
    match bucket {
        ScaleBucket::Small => (0.006, 0.022),
        ScaleBucket::Medium => (0.03, 0.18),
        ScaleBucket::Large => (0.22, 0.38),
    }
}

struct Blob {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    harmonics: [(f64, f64); 3],
}

const MAX_HARMONIC: f64 = 0.06;

impl Blob {
    fn random<R: Rng>(rng: &mut R, area: f64, size: usize) -> Option<Self> {
        let r = (area / PI).sqrt();
        let aspect: f64 = rng.gen_range(0.7..1.4);
        let (ry, rx) = (r * aspect.sqrt(), r / aspect.sqrt());
        let harmonics = [(); 3].map(|_| (rng.gen_range(0.0..MAX_HARMONIC), rng.gen_range(0.0..2.0 * PI)));
        let extent = ry.max(rx) * (1.0 + 3.0 * MAX_HARMONIC);
        let (lo, hi) = (extent + 1.0, size as f64 - 2.0 - extent);
        if lo >= hi {
            return None;
        }
        Some(Self { cy: rng.gen_range(lo..hi), cx: rng.gen_range(lo..hi), ry, rx, angle: rng.gen_range(0.0..PI), harmonics })
    }

    /// Normalized radial coordinate; `<= 1` is inside.
    fn level(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.angle.sin_cos();
        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
        let rho = ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt();
        let theta = v.atan2(u);
        let wobble: f64 = self.harmonics.iter().enumerate().map(|(k, &(a, p))| a * ((k as f64 + 2.0) * theta + p).sin()).sum();
        rho / (1.0 + wobble)
    }
}

fn quantize(v: f64) -> f32 {
    io::quantize(v as f32) as f32 / 255.0
}

fn pick_bucket<R: Rng>(rng: &mut R, probs: &[f64; 3]) -> ScaleBucket {
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (b, &p) in ScaleBucket::ALL.iter().zip(probs) {
        if u < p {
            return *b;
        }
        u -= p;
    }
    ScaleBucket::Large
}

/// One sample, deterministic in `(seed, index)`. Pixel values lie on the 8-bit
/// grid so a PGM round trip is lossless.
pub fn synth_sample(config: &SynthConfig, seed: u64, index: u64) -> Result<SegSample> {
    let size = config.size;
    if size == 0 || !size.is_multiple_of(TOTAL_STRIDE) {
        return Err(Error::invalid(format!("synthetic size {size} is not a positive multiple of {TOTAL_STRIDE}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index + 1);
    let bucket = pick_bucket(&mut rng, &config.bucket_probs);
    let plane = (size * size) as f64;

    let (mask, blobs) = loop {
        let (lo, hi) = ratio_range(bucket);
        let ratio = rng.gen_range(lo..hi);
        let count = if bucket == ScaleBucket::Small { 1 } else { *[1, 1, 1, 2, 2, 3].choose(&mut rng).unwrap() };
        let mut shares = vec![1.0];
        if count > 1 {
            let first = rng.gen_range(0.5..0.8);
            shares = vec![first];
            shares.extend(std::iter::repeat_n((1.0 - first) / (count - 1) as f64, count - 1));
        }
        let Some(blobs) = shares.iter().map(|s| Blob::random(&mut rng, s * ratio * plane, size)).collect::<Option<Vec<_>>>() else {
            continue;
        };
        let mut mask = Mask::new(1, size, size);
        for y in 0..size {
            for x in 0..size {
                if blobs.iter().any(|b| b.level(y as f64, x as f64) <= 1.0) {
                    mask.set(0, y, x, 1);
                }
            }
        }
        let (r, measured) = polyp_scale_ratio(&mask);
        if r > 0.0 && measured == bucket {
            break (mask, blobs);
        }
    };

    let image = render(&mut rng, config, &mask, &blobs)?;
    SegSample::new(format!("blob{index:05}"), image, mask, DEFAULT_EDGE_RADIUS)
}

/// Textured background, optionally brightened inside `mask`, plus sensor noise.
fn render(rng: &mut ChaCha8Rng, config: &SynthConfig, mask: &Mask, blobs: &[Blob]) -> Result<Image> {
    let size = config.size;
    let background: f64 = rng.gen_range(0.15..0.4);
    let contrast = config.contrast + rng.gen_range(0.0..0.2);
    let waves = [(); 3].map(|_| {
        (rng.gen_range(0.01..0.04), rng.gen_range(0.02..0.15), rng.gen_range(0.02..0.15), rng.gen_range(0.0..2.0 * PI))
    });
    let noise = Normal::new(0.0, config.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut image = Image::new(1, size, size);
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f64, x as f64);
            let texture: f64 = waves.iter().map(|&(a, ky, kx, p)| a * (ky * fy * 2.0 * PI + kx * fx * 2.0 * PI + p).sin()).sum();
            let mut v = background + texture;
            if mask.get(0, y, x) != 0 {
                let d = blobs.iter().map(|b| b.level(fy, fx)).fold(f64::INFINITY, f64::min);
                v += contrast + 0.05 * (1.0 - d * d).max(0.0);
            }
            image.set(0, y, x, quantize(v + noise.sample(rng)));
        }
    }
    Ok(image)
}

/// A polyp-free image drawn from the same background model as [`synth_sample`].
pub fn synth_background(config: &SynthConfig, seed: u64) -> Result<Image> {
    let size = config.size;
    if size == 0 || !size.is_multiple_of(TOTAL_STRIDE) {
        return Err(Error::invalid(format!("synthetic size {size} is not a positive multiple of {TOTAL_STRIDE}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    render(&mut rng, config, &Mask::new(1, size, size), &[])
}

/// Deterministic split assignment: a seeded shuffle marks `test_fraction`
/// of the indices as `test`, the rest `train`.
pub fn split_tags(n: usize, test_fraction: f64, seed: u64) -> Vec<&'static str> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_test = (n as f64 * test_fraction).round() as usize;
    let mut tags = vec!["train"; n];
    for &i in &order[..n_test] {
        tags[i] = "test";
    }
    tags
}

/// Writes `n` samples as PGM files under `out_dir/{images,masks}` plus
/// `out_dir/manifest.tsv`, and returns the manifest.
pub fn synth_blob_dataset(n: usize, config: &SynthConfig, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    let tags = split_tags(n, config.test_fraction, seed);
    let mut records = Vec::with_capacity(n);
    for (i, tag) in tags.into_iter().enumerate() {
        let s = synth_sample(config, seed, i as u64)?;
        let image = Path::new("images").join(format!("{}.pgm", s.id));
        let mask = Path::new("masks").join(format!("{}.pgm", s.id));
        io::write_image(&out_dir.join(&image), &s.image)?;
        io::write_mask(&out_dir.join(&mask), &s.mask)?;
        records.push(ManifestRecord { id: s.id, image, mask, split: tag.to_string() });
    }
    let manifest = DatasetManifest { root: out_dir.to_path_buf(), records };
    manifest.save(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

//! Images, masks, edge targets, augmentation and the synthetic blob dataset.

pub mod augment;
pub mod edges;
pub mod io;
pub mod raster;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use augment::{augment, rescale, scaled_size, AugConfig};
pub use edges::{sobel_edge_gt, DEFAULT_EDGE_RADIUS};
pub use io::{DatasetManifest, ManifestRecord};
pub use raster::{Image, Mask, Raster};
pub use synth::{synth_background, synth_blob_dataset, synth_sample, SynthConfig};

/// Image, binary mask `G` and binary edge target `Ge` of equal spatial size.
#[derive(Clone, Debug, PartialEq)]
pub struct SegSample {
    pub id: String,
    pub image: Image,
    pub mask: Mask,
    pub edges: Mask,
}

impl SegSample {
    /// Builds a sample, deriving `Ge` from `G`.
    pub fn new(id: impl Into<String>, image: Image, mask: Mask, edge_radius: usize) -> Result<Self> {
        if (image.height, image.width) != (mask.height, mask.width) || mask.channels != 1 {
            return Err(Error::shape(format!(
                "image {}x{} and mask {}x{}x{} disagree",
                image.height, image.width, mask.channels, mask.height, mask.width
            )));
        }
        let edges = sobel_edge_gt(&mask, edge_radius)?;
        Ok(Self { id: id.into(), image, mask, edges })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.mask.height, self.mask.width)
    }

    /// Loads one manifest record.
    pub fn load(manifest: &DatasetManifest, record: &ManifestRecord, edge_radius: usize) -> Result<Self> {
        let image = io::read_image(&manifest.resolve(&record.image))?;
        let mask = io::read_mask(&manifest.resolve(&record.mask))?;
        Self::new(record.id.clone(), image, mask, edge_radius)
    }
}

/// Stacks samples into `(images, masks, edges)` batch tensors.
pub fn collate<T: Scalar>(samples: &[SegSample]) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let images: Vec<_> = samples.iter().map(|s| s.image.to_tensor()).collect();
    let masks: Vec<_> = samples.iter().map(|s| s.mask.to_tensor()).collect();
    let edges: Vec<_> = samples.iter().map(|s| s.edges.to_tensor()).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?, Tensor::stack(&edges)?))
}

/// Polyp size class by foreground area ratio.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScaleBucket {
    Small,
    Medium,
    Large,
}

impl ScaleBucket {
    pub const ALL: [ScaleBucket; 3] = [ScaleBucket::Small, ScaleBucket::Medium, ScaleBucket::Large];
    pub const SMALL_BELOW: f64 = 0.025;
    pub const LARGE_ABOVE: f64 = 0.2;

    pub fn of_ratio(r: f64) -> Self {
        if r < Self::SMALL_BELOW {
            Self::Small
        } else if r > Self::LARGE_ABOVE {
            Self::Large
        } else {
            Self::Medium
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Small => "small",
            Self::Medium => "medium",
            Self::Large => "large",
        }
    }
}

impl fmt::Display for ScaleBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScaleBucket {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|b| b.as_str() == s).ok_or_else(|| Error::invalid(format!("unknown scale bucket `{s}`")))
    }
}

/// Foreground fraction `r` and its bucket.
pub fn polyp_scale_ratio(mask: &Mask) -> (f64, ScaleBucket) {
    let total = mask.data.len();
    let r = if total == 0 { 0.0 } else { mask.count_ones() as f64 / total as f64 };
    (r, ScaleBucket::of_ratio(r))
}

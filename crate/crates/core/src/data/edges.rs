//! Edge targets from binary masks.

use crate::error::{Error, Result};

use super::raster::Mask;

const SOBEL_X: [[i32; 3]; 3] = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]];
const SOBEL_Y: [[i32; 3]; 3] = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]];

pub const DEFAULT_EDGE_RADIUS: usize = 1;

/// Sobel response magnitude `> 0` with replicate borders, then square
/// (Chebyshev) dilation by `radius`.
pub fn sobel_edge_gt(mask: &Mask, radius: usize) -> Result<Mask> {
    if mask.channels != 1 {
        return Err(Error::invalid(format!("edge target needs a 1-channel mask, got {}", mask.channels)));
    }
    if let Some(&v) = mask.data.iter().find(|&&v| v > 1) {
        return Err(Error::invalid(format!("edge target needs a binary mask, found value {v}")));
    }
    let (h, w) = (mask.height as isize, mask.width as isize);
    let at = |y: isize, x: isize| mask.get(0, y.clamp(0, h - 1) as usize, x.clamp(0, w - 1) as usize) as i32;
    let mut edges = Mask::new(1, mask.height, mask.width);
    for y in 0..h {
        for x in 0..w {
            let (mut gx, mut gy) = (0, 0);
            for (i, (rx, ry)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                for j in 0..3 {
                    let v = at(y + i as isize - 1, x + j as isize - 1);
                    gx += rx[j] * v;
                    gy += ry[j] * v;
                }
            }
            if gx != 0 || gy != 0 {
                edges.set(0, y as usize, x as usize, 1);
            }
        }
    }
    Ok(dilate(&edges, radius))
}

/// Binary dilation with a `(2r+1)^2` square structuring element.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = (mask.height, mask.width);
    let r = radius;
    // separable: rows then columns
    let mut tmp = Mask::new(1, h, w);
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            if (lo..=hi).any(|xx| mask.get(0, y, xx) != 0) {
                tmp.set(0, y, x, 1);
            }
        }
    }
    let mut out = Mask::new(1, h, w);
    for y in 0..h {
        for x in 0..w {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(h - 1);
            if (lo..=hi).any(|yy| tmp.get(0, yy, x) != 0) {
                out.set(0, y, x, 1);
            }
        }
    }
    out
}

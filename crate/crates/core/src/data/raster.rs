//! Planar CHW rasters and the geometric transforms shared by images and masks.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Planar (channel-major) raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster<P> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<P>,
}

/// Image with values in `[0, 1]`.
pub type Image = Raster<f32>;
/// Single-channel map with values in `{0, 1}`.
pub type Mask = Raster<u8>;

impl<P: Copy + Default> Raster<P> {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![P::default(); channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<P>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "raster {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> P {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: P) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[P] {
        &self.data[c * self.plane_len()..(c + 1) * self.plane_len()]
    }

    fn remap(&self, height: usize, width: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let mut out = Self::new(self.channels, height, width);
        for c in 0..self.channels {
            for y in 0..height {
                for x in 0..width {
                    let (sy, sx) = src(y, x);
                    out.set(c, y, x, self.get(c, sy, sx));
                }
            }
        }
        out
    }

    pub fn flip_horizontal(&self) -> Self {
        let w = self.width;
        self.remap(self.height, w, |y, x| (y, w - 1 - x))
    }

    pub fn flip_vertical(&self) -> Self {
        let h = self.height;
        self.remap(h, self.width, |y, x| (h - 1 - y, x))
    }

    /// Rotates counter-clockwise by `quarter_turns * 90` degrees in image
    /// coordinates (x right, y down, so "counter-clockwise" as displayed).
    pub fn rotate90(&self, quarter_turns: u32) -> Self {
        let (h, w) = (self.height, self.width);
        match quarter_turns % 4 {
            0 => self.clone(),
            // out(y, x) = in(x, w - 1 - y)
            1 => self.remap(w, h, |y, x| (x, w - 1 - y)),
            2 => self.remap(h, w, |y, x| (h - 1 - y, w - 1 - x)),
            _ => self.remap(w, h, |y, x| (h - 1 - x, y)),
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Ok(self.remap(height, width, |y, x| (top + y, left + x)))
    }

    /// Nearest-neighbour resampling with pixel-centre alignment.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        let (sh, sw) = (self.height, self.width);
        let map = |d: usize, out: usize, src: usize| (((d as f64 + 0.5) * src as f64 / out as f64).floor() as usize).min(src - 1);
        self.remap(height, width, |y, x| (map(y, height, sh), map(x, width, sw)))
    }
}

impl Raster<f32> {
    /// Bilinear resampling with pixel-centre alignment.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let axis = |out: usize, src: usize| -> Vec<(usize, usize, f32)> {
            (0..out)
                .map(|d| {
                    let s = ((d as f64 + 0.5) * src as f64 / out as f64 - 0.5).max(0.0);
                    let i0 = (s.floor() as usize).min(src - 1);
                    let i1 = (i0 + 1).min(src - 1);
                    (i0, i1, (s - i0 as f64) as f32)
                })
                .collect()
        };
        let ys = axis(height, self.height);
        let xs = axis(width, self.width);
        let mut out = Self::new(self.channels, height, width);
        for c in 0..self.channels {
            for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let top = self.get(c, y0, x0) * (1.0 - fx) + self.get(c, y0, x1) * fx;
                    let bot = self.get(c, y1, x0) * (1.0 - fx) + self.get(c, y1, x1) * fx;
                    out.set(c, y, x, top * (1.0 - fy) + bot * fy);
                }
            }
        }
        out
    }

    /// Rotation by `degrees` about the image centre, bilinear, zero fill.
    pub fn rotate_bilinear(&self, degrees: f64) -> Self {
        let mut out = Self::new(self.channels, self.height, self.width);
        for_rotated(self.height, self.width, degrees, |y, x, sy, sx| {
            let (h, w) = (self.height as f64, self.width as f64);
            if sy < -0.5 || sx < -0.5 || sy > h - 0.5 || sx > w - 0.5 {
                return;
            }
            let (sy, sx) = (sy.clamp(0.0, h - 1.0), sx.clamp(0.0, w - 1.0));
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
            let (fy, fx) = ((sy - y0 as f64) as f32, (sx - x0 as f64) as f32);
            for c in 0..self.channels {
                let top = self.get(c, y0, x0) * (1.0 - fx) + self.get(c, y0, x1) * fx;
                let bot = self.get(c, y1, x0) * (1.0 - fx) + self.get(c, y1, x1) * fx;
                out.set(c, y, x, top * (1.0 - fy) + bot * fy);
            }
        });
        out
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::lit(v as f64)).collect();
        Tensor::from_vec(Shape::new(1, self.channels, self.height, self.width), data).expect("sized by construction")
    }
}

impl Raster<u8> {
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Nearest-neighbour rotation about the image centre, zero fill.
    pub fn rotate_nearest(&self, degrees: f64) -> Self {
        let mut out = Self::new(self.channels, self.height, self.width);
        for_rotated(self.height, self.width, degrees, |y, x, sy, sx| {
            let (ry, rx) = (sy.round(), sx.round());
            if ry < 0.0 || rx < 0.0 || ry >= self.height as f64 || rx >= self.width as f64 {
                return;
            }
            for c in 0..self.channels {
                out.set(c, y, x, self.get(c, ry as usize, rx as usize));
            }
        });
        out
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| if v != 0 { T::one() } else { T::zero() }).collect();
        Tensor::from_vec(Shape::new(1, self.channels, self.height, self.width), data).expect("sized by construction")
    }

    /// Binarizes a probability map at `threshold` (`p >= threshold` is foreground).
    pub fn from_probabilities(height: usize, width: usize, probs: &[f64], threshold: f64) -> Self {
        Self { channels: 1, height, width, data: probs.iter().map(|&p| u8::from(p >= threshold)).collect() }
    }
}

/// Calls `f(y, x, src_y, src_x)` for every output pixel of a rotation about the centre.
fn for_rotated(height: usize, width: usize, degrees: f64, mut f: impl FnMut(usize, usize, f64, f64)) {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    for y in 0..height {
        for x in 0..width {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            // inverse of a counter-clockwise display rotation (y axis points down)
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            f(y, x, sy, sx);
        }
    }
}

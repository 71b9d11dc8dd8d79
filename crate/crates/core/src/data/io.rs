//! File formats: binary PGM/PPM, raw `EFAT` float tensors and the dataset manifest.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

use super::raster::{Image, Mask};

pub const EFAT_MAGIC: &[u8; 4] = b"EFAT";
pub const EFAT_VERSION: u32 = 1;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decoded netpbm raster: channels, height, width, maxval, samples.
struct Netpbm {
    channels: usize,
    height: usize,
    width: usize,
    maxval: u32,
    samples: Vec<u8>,
}

fn parse_netpbm(path: &Path, bytes: &[u8]) -> Result<Netpbm> {
    let bad = |msg: &str| Error::format(path, msg);
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(bad("not a binary PGM (P5) or PPM (P6) file")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed header number"))?;
    }
    // exactly one whitespace byte separates the header from the samples
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(bad(&format!("unsupported maxval {maxval} (expected 1..=255)")));
    }
    let need = channels * width * height;
    let samples = bytes.get(pos..pos + need).ok_or_else(|| bad("truncated pixel data"))?.to_vec();
    Ok(Netpbm { channels, height, width, maxval: maxval as u32, samples })
}

/// Reads a PGM (1 channel) or PPM (3 channels) into `[0, 1]` planar form.
pub fn read_image(path: &Path) -> Result<Image> {
    let p = parse_netpbm(path, &read_file(path)?)?;
    let plane = p.height * p.width;
    let mut data = vec![0.0f32; p.channels * plane];
    for (i, &s) in p.samples.iter().enumerate() {
        let (pix, c) = (i / p.channels, i % p.channels);
        data[c * plane + pix] = s as f32 / p.maxval as f32;
    }
    Image::from_vec(p.channels, p.height, p.width, data)
}

/// Reads a mask image; a pixel is foreground when it is at least half the
/// largest value present. Colour masks use their first channel.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let p = parse_netpbm(path, &read_file(path)?)?;
    let first: Vec<u8> = p.samples.iter().step_by(p.channels).copied().collect();
    let max = first.iter().copied().max().unwrap_or(0) as u32;
    let data = first.iter().map(|&v| u8::from(max > 0 && 2 * v as u32 >= max)).collect();
    Mask::from_vec(1, p.height, p.width, data)
}

fn netpbm_bytes(channels: usize, height: usize, width: usize, sample: impl Fn(usize, usize) -> u8) -> Vec<u8> {
    let magic = if channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    let plane = height * width;
    out.reserve(channels * plane);
    for pix in 0..plane {
        for c in 0..channels {
            out.push(sample(c, pix));
        }
    }
    out
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a 1-channel image as PGM or a 3-channel image as PPM.
pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    if image.channels != 1 && image.channels != 3 {
        return Err(Error::invalid(format!("cannot write {}-channel image as PGM/PPM", image.channels)));
    }
    let plane = image.plane_len();
    let bytes = netpbm_bytes(image.channels, image.height, image.width, |c, p| quantize(image.data[c * plane + p]));
    write_file(path, &bytes)
}

/// Writes a mask as PGM with values `{0, 255}`.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let bytes = netpbm_bytes(1, mask.height, mask.width, |_, p| if mask.data[p] != 0 { 255 } else { 0 });
    write_file(path, &bytes)
}

/// Writes a probability map in `[0, 1]` as an 8-bit PGM.
pub fn write_probability_pgm(path: &Path, height: usize, width: usize, probs: &[f32]) -> Result<()> {
    write_file(path, &netpbm_bytes(1, height, width, |_, p| quantize(probs[p])))
}

/// Raw tensor file: 16-byte header (`EFAT`, u32 version, u32 rank, u32 reserved),
/// `rank` u32 extents, then little-endian f32 values.
pub fn write_efat(path: &Path, extents: &[usize], values: &[f32]) -> Result<()> {
    let count: usize = extents.iter().product();
    if count != values.len() {
        return Err(Error::shape(format!("EFAT extents {extents:?} need {count} values, got {}", values.len())));
    }
    let mut out = Vec::with_capacity(16 + 4 * extents.len() + 4 * values.len());
    out.extend_from_slice(EFAT_MAGIC);
    out.extend_from_slice(&EFAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(extents.len() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for &e in extents {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &out)
}

pub fn read_efat(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bytes = read_file(path)?;
    let bad = |msg: String| Error::format(path, msg);
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| bad("truncated header".into()))
    };
    if bytes.get(..4) != Some(EFAT_MAGIC.as_slice()) {
        return Err(bad("missing EFAT magic".into()));
    }
    let version = word(4)?;
    if version != EFAT_VERSION {
        return Err(bad(format!("unsupported EFAT version {version}")));
    }
    let rank = word(8)? as usize;
    let extents = (0..rank).map(|i| word(16 + 4 * i).map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
    let start = 16 + 4 * rank;
    let count: usize = extents.iter().product();
    let payload = bytes.get(start..start + 4 * count).ok_or_else(|| bad("truncated payload".into()))?;
    let values = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    Ok((extents, values))
}

pub fn read_efat_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let (extents, values) = read_efat(path)?;
    Tensor::from_vec(Shape::from_dims(&extents)?, values.iter().map(|&v| T::lit(v as f64)).collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: String,
}

/// Ordered `(id, image, mask, split)` records. Relative paths resolve against `root`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn parse(text: &str, root: impl Into<PathBuf>, origin: &Path) -> Result<Self> {
        let mut records = Vec::new();
        let mut ids = HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, image, mask, split] = fields[..] else {
                return Err(Error::format(
                    origin,
                    format!("line {}: expected 4 tab-separated fields, found {}", lineno + 1, fields.len()),
                ));
            };
            if !ids.insert(id.to_string()) {
                return Err(Error::format(origin, format!("line {}: duplicate id `{id}`", lineno + 1)));
            }
            records.push(ManifestRecord { id: id.into(), image: image.into(), mask: mask.into(), split: split.into() });
        }
        Ok(Self { root: root.into(), records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root, path)
    }

    pub fn to_text(&self) -> String {
        self.records
            .iter()
            .map(|r| format!("{}\t{}\t{}\t{}\n", r.id, r.image.display(), r.mask.display(), r.split))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, tag: &str) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == tag).collect()
    }

    /// Checks that every referenced file exists.
    pub fn validate_files(&self) -> Result<()> {
        for r in &self.records {
            for p in [&r.image, &r.mask] {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::format(&full, format!("file referenced by record `{}` does not exist", r.id)));
                }
            }
        }
        Ok(())
    }
}

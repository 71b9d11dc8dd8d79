//! Binary checkpoints: `EFAC` magic, u32 version, a length-prefixed UTF-8
//! config echo, then `(name, rank, extents, f32 payload)` records until EOF.
//! All integers are little-endian u32.

use std::path::Path;

use crate::autodiff::{Adam, AdamConfig};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"EFAC";
pub const VERSION: u32 = 1;

const PARAM: &str = "param/";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub extents: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Optimizer steps taken when the checkpoint was written.
    pub step: u64,
    pub tensors: Vec<NamedTensor>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos.saturating_add(n))
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }
}

impl Checkpoint {
    /// Snapshot of parameters, buffers and (optionally) Adam moments.
    pub fn capture(config: &RunConfig, step: u64, params: &ParamStore<f32>, adam: Option<&Adam<f32>>) -> Self {
        let mut tensors: Vec<NamedTensor> = params
            .iter()
            .map(|(name, p)| NamedTensor { name: format!("{PARAM}{name}"), extents: p.value.shape().dims().to_vec(), values: p.value.data().to_vec() })
            .collect();
        if let Some(adam) = adam {
            for (name, m, v) in adam.moments() {
                for (prefix, t) in [(ADAM_M, m), (ADAM_V, v)] {
                    tensors.push(NamedTensor { name: format!("{prefix}{name}"), extents: t.shape().dims().to_vec(), values: t.data().to_vec() });
                }
            }
        }
        Self { config: config.clone(), step, tensors }
    }

    fn echo(&self) -> String {
        format!("{}checkpoint.step = {}\n", self.config.to_text(), self.step)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let echo = self.echo();
        put_u32(&mut out, echo.len())?;
        out.extend_from_slice(echo.as_bytes());
        for t in &self.tensors {
            if t.extents.iter().product::<usize>() != t.values.len() {
                return Err(Error::Checkpoint(format!("tensor `{}` extents disagree with its payload", t.name)));
            }
            put_u32(&mut out, t.name.len())?;
            out.extend_from_slice(t.name.as_bytes());
            put_u32(&mut out, t.extents.len())?;
            for &e in &t.extents {
                put_u32(&mut out, e)?;
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Decodes a checkpoint; the magic and version are verified before any
    /// tensor record is touched.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!("checkpoint version {version} is not supported (expected {VERSION})")));
        }
        let echo = r.string("config echo")?;
        let mut step = None;
        let mut config = RunConfig::default();
        for (k, v) in crate::config::key_values(&echo)? {
            if k == "checkpoint.step" {
                step = Some(v.parse().map_err(|_| Error::Checkpoint(format!("bad step counter `{v}`")))?);
            } else {
                config.set(&k, &v)?;
            }
        }
        let step = step.ok_or_else(|| Error::Checkpoint("config echo lacks the step counter".into()))?;
        let mut tensors = Vec::new();
        while r.pos < bytes.len() {
            let name = r.string("tensor name")?;
            let rank = r.u32("rank")?;
            let extents = (0..rank).map(|_| r.u32("extent")).collect::<Result<Vec<_>>>()?;
            let count: usize = extents.iter().product();
            let payload = r.take(count.saturating_mul(4), &format!("payload of `{name}`"))?;
            let values = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            tensors.push(NamedTensor { name, extents, values });
        }
        Ok(Self { config, step, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    fn tensor(t: &NamedTensor) -> Result<Tensor<f32>> {
        Tensor::from_vec(Shape::from_dims(&t.extents)?, t.values.clone())
    }

    /// Overwrites every entry of `params` (as laid out by a freshly built
    /// model) with the stored values. Missing, extra or reshaped tensors are errors.
    pub fn restore_params(&self, params: &mut ParamStore<f32>) -> Result<()> {
        let mut seen = 0;
        for t in self.tensors.iter().filter(|t| t.name.starts_with(PARAM)) {
            let name = &t.name[PARAM.len()..];
            let slot = params.get_mut(name).map_err(|_| Error::Checkpoint(format!("checkpoint has unexpected tensor `{name}`")))?;
            let value = Self::tensor(t)?;
            if value.shape() != slot.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, the model expects {:?}",
                    value.shape().dims(),
                    slot.value.shape().dims()
                )));
            }
            slot.value = value;
            seen += 1;
        }
        if seen != params.len() {
            let missing: Vec<&str> =
                params.names().filter(|n| !self.tensors.iter().any(|t| t.name == format!("{PARAM}{n}"))).take(5).collect();
            return Err(Error::Checkpoint(format!("checkpoint lacks {} model tensors, e.g. {missing:?}", params.len() - seen)));
        }
        Ok(())
    }

    /// Adam state if moments were stored.
    pub fn restore_adam(&self, config: AdamConfig) -> Result<Option<Adam<f32>>> {
        let mut moments = Vec::new();
        for t in self.tensors.iter().filter(|t| t.name.starts_with(ADAM_M)) {
            let name = &t.name[ADAM_M.len()..];
            let v = self
                .tensors
                .iter()
                .find(|u| u.name == format!("{ADAM_V}{name}"))
                .ok_or_else(|| Error::Checkpoint(format!("second moment of `{name}` missing")))?;
            moments.push((name.to_string(), Self::tensor(t)?, Self::tensor(v)?));
        }
        Ok((!moments.is_empty()).then(|| Adam::restore(config, self.step, moments)))
    }
}

//! Run configuration and its flat `key = value` text format.
//!
//! Lines are `dotted.key = value`; `#` starts a comment. Lists are
//! comma-separated. Unknown keys are rejected so typos do not pass silently.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::autodiff::AdamConfig;
use crate::backbone::LEVELS;
use crate::data::AugConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricConfig;
use crate::model::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from `lr` to zero over the run.
    Cosine,
}

impl LrSchedule {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Cosine => "cosine",
        }
    }

    /// Learning rate at `step` (0-based) of `total`.
    pub fn lr_at(self, base: f64, step: u64, total: u64) -> f64 {
        match self {
            Self::Constant => base,
            Self::Cosine if total > 0 => {
                let t = (step as f64 / total as f64).min(1.0);
                0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
            }
            Self::Cosine => base,
        }
    }
}

impl FromStr for LrSchedule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "constant" => Ok(Self::Constant),
            "cosine" => Ok(Self::Cosine),
            _ => Err(format!("expected `constant` or `cosine`, got `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub schedule: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stops after this many optimizer steps when nonzero.
    pub max_steps: u64,
    /// Writes a checkpoint every this many steps when nonzero; the final
    /// checkpoint is always written.
    pub checkpoint_every: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { lr: 1e-4, schedule: LrSchedule::Constant, epochs: 25, batch_size: 8, max_steps: 0, checkpoint_every: 0 }
    }
}

impl OptimConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..AdamConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub aug: AugConfig,
    pub optim: OptimConfig,
    pub metrics: MetricConfig,
    pub seed: u64,
    pub manifest: PathBuf,
    pub train_split: String,
    pub test_split: String,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            aug: AugConfig::default(),
            optim: OptimConfig::default(),
            metrics: MetricConfig::default(),
            seed: 0,
            manifest: PathBuf::from("data/manifest.tsv"),
            train_split: "train".into(),
            test_split: "test".into(),
            out_dir: PathBuf::from("runs/desk"),
        }
    }
}

fn list<T: Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse().map_err(|e| Error::Config(format!("{key}: cannot parse `{v}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

fn parse_array<T: FromStr, const N: usize>(key: &str, v: &str) -> Result<[T; N]>
where
    T::Err: Display,
{
    let items = parse_list::<T>(key, v)?;
    let n = items.len();
    items.try_into().map_err(|_| Error::Config(format!("{key}: expected {N} values, got {n}")))
}

impl ModelConfig {
    /// `(key, value)` pairs of the model section, in canonical order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let b = &self.backbone;
        vec![
            ("model.common_width", self.common_width.to_string()),
            ("model.dilation_rates", list(&self.dilation_rates)),
            ("model.cfm_reduction", self.cfm_reduction.to_string()),
            ("model.beta_edge", self.beta_edge.to_string()),
            ("model.backbone.input_channels", b.input_channels.to_string()),
            ("model.backbone.stem_channels", b.stem_channels.to_string()),
            ("model.backbone.channels", list(&b.channels_per_level)),
            ("model.backbone.blocks", list(&b.blocks_per_level)),
        ]
    }

    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        let b = &mut self.backbone;
        match key {
            "model.common_width" => self.common_width = parse(key, v)?,
            "model.dilation_rates" => self.dilation_rates = parse_array(key, v)?,
            "model.cfm_reduction" => self.cfm_reduction = parse(key, v)?,
            "model.beta_edge" => self.beta_edge = parse(key, v)?,
            "model.backbone.input_channels" => b.input_channels = parse(key, v)?,
            "model.backbone.stem_channels" => b.stem_channels = parse(key, v)?,
            "model.backbone.channels" => b.channels_per_level = parse_array::<usize, LEVELS>(key, v)?,
            "model.backbone.blocks" => b.blocks_per_level = parse_array::<usize, LEVELS>(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Field-level differences as `(key, self, other)`.
    pub fn diff(&self, other: &ModelConfig) -> Vec<(&'static str, String, String)> {
        self.to_pairs()
            .into_iter()
            .zip(other.to_pairs())
            .filter(|((_, a), (_, b))| a != b)
            .map(|((k, a), (_, b))| (k, a, b))
            .collect()
    }

    /// Parses a model section out of `key = value` text, ignoring other keys.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = Self::default();
        for (key, value) in key_values(text)? {
            m.set(&key, &value)?;
        }
        Ok(m)
    }
}

/// Non-comment `key = value` lines.
pub fn key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{raw}`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut pairs = vec![("seed", self.seed.to_string())];
        pairs.extend(self.model.to_pairs());
        let a = &self.aug;
        pairs.extend([
            ("aug.flip_prob", a.flip_prob.to_string()),
            ("aug.rotations", list(&a.rotations)),
            ("aug.crop_min", a.crop_range.0.to_string()),
            ("aug.crop_max", a.crop_range.1.to_string()),
            ("aug.scale_ratios", list(&a.scale_ratios)),
            ("aug.target_size", a.target_size.to_string()),
            ("aug.edge_radius", a.edge_radius.to_string()),
        ]);
        let o = &self.optim;
        pairs.extend([
            ("optim.lr", o.lr.to_string()),
            ("optim.schedule", o.schedule.as_str().to_string()),
            ("optim.epochs", o.epochs.to_string()),
            ("optim.batch_size", o.batch_size.to_string()),
            ("optim.max_steps", o.max_steps.to_string()),
            ("optim.checkpoint_every", o.checkpoint_every.to_string()),
        ]);
        let m = &self.metrics;
        pairs.extend([
            ("eval.threshold", m.threshold.to_string()),
            ("eval.s_alpha", m.s_alpha.to_string()),
            ("eval.wfm_beta2", m.wfm_beta2.to_string()),
            ("eval.curve_beta2", m.curve_beta2.to_string()),
        ]);
        pairs.extend([
            ("data.manifest", self.manifest.display().to_string()),
            ("data.train_split", self.train_split.clone()),
            ("data.test_split", self.test_split.clone()),
            ("output.dir", self.out_dir.display().to_string()),
        ]);
        pairs
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        if self.model.set(key, v)? {
            return Ok(());
        }
        let (a, o, m) = (&mut self.aug, &mut self.optim, &mut self.metrics);
        match key {
            "seed" => self.seed = parse(key, v)?,
            "aug.flip_prob" => a.flip_prob = parse(key, v)?,
            "aug.rotations" => a.rotations = parse_list(key, v)?,
            "aug.crop_min" => a.crop_range.0 = parse(key, v)?,
            "aug.crop_max" => a.crop_range.1 = parse(key, v)?,
            "aug.scale_ratios" => a.scale_ratios = parse_list(key, v)?,
            "aug.target_size" => a.target_size = parse(key, v)?,
            "aug.edge_radius" => a.edge_radius = parse(key, v)?,
            "optim.lr" => o.lr = parse(key, v)?,
            "optim.schedule" => o.schedule = parse(key, v)?,
            "optim.epochs" => o.epochs = parse(key, v)?,
            "optim.batch_size" => o.batch_size = parse(key, v)?,
            "optim.max_steps" => o.max_steps = parse(key, v)?,
            "optim.checkpoint_every" => o.checkpoint_every = parse(key, v)?,
            "eval.threshold" => m.threshold = parse(key, v)?,
            "eval.s_alpha" => m.s_alpha = parse(key, v)?,
            "eval.wfm_beta2" => m.wfm_beta2 = parse(key, v)?,
            "eval.curve_beta2" => m.curve_beta2 = parse(key, v)?,
            "data.manifest" => self.manifest = v.into(),
            "data.train_split" => self.train_split = v.into(),
            "data.test_split" => self.test_split = v.into(),
            "output.dir" => self.out_dir = v.into(),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses text over the defaults; missing keys keep their default value.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (key, value) in key_values(text)? {
            c.set(&key, &value)?;
        }
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Loads a config file; relative data and output paths resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::from_text(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if c.manifest.is_relative() {
            c.manifest = base.join(&c.manifest);
        }
        if c.out_dir.is_relative() {
            c.out_dir = base.join(&c.out_dir);
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.aug.validate()?;
        let o = &self.optim;
        if !(o.lr.is_finite() && o.lr >= 0.0) {
            return Err(Error::Config(format!("optim.lr = {} must be finite and non-negative", o.lr)));
        }
        if o.batch_size == 0 {
            return Err(Error::Config("optim.batch_size must be positive".into()));
        }
        if o.epochs == 0 && o.max_steps == 0 {
            return Err(Error::Config("one of optim.epochs or optim.max_steps must be positive".into()));
        }
        let m = &self.metrics;
        if !(0.0..=1.0).contains(&m.threshold) || !(0.0..=1.0).contains(&m.s_alpha) {
            return Err(Error::Config("eval.threshold and eval.s_alpha must lie in [0, 1]".into()));
        }
        if !(m.wfm_beta2 > 0.0 && m.curve_beta2 > 0.0) {
            return Err(Error::Config("eval.wfm_beta2 and eval.curve_beta2 must be positive".into()));
        }
        if self.train_split == self.test_split {
            return Err(Error::Config("data.train_split and data.test_split must differ".into()));
        }
        Ok(())
    }
}

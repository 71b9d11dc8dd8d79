use std::fs;
use std::path::{Path, PathBuf};

use efanet::data::io::{read_image, write_efat, write_probability_pgm};
use efanet::data::{DatasetManifest, Image, Mask};
use efanet::metrics::{evaluate_image, pr_curves, CurveSet, MetricReport};
use efanet::{Checkpoint, EfaNet, Error, ParamStore, RunConfig};
use rayon::prelude::*;

use crate::error::{Classify, CliError, CliResult};

/// A trained model restored from a checkpoint.
pub struct Restored {
    pub config: RunConfig,
    pub net: EfaNet,
    pub params: ParamStore<f32>,
}

impl Restored {
    /// Loads a checkpoint. When `expected` is given its model section must
    /// match the checkpoint's, otherwise the differing fields are reported.
    pub fn load(path: &Path, expected: Option<&RunConfig>) -> CliResult<Self> {
        let ck = Checkpoint::load(path).checkpoint()?;
        if let Some(exp) = expected {
            let diff = exp.model.diff(&ck.config.model);
            if !diff.is_empty() {
                let fields: Vec<String> = diff.iter().map(|(k, a, b)| format!("{k}: config {a}, checkpoint {b}")).collect();
                return Err(CliError::Checkpoint(Error::Checkpoint(format!(
                    "model config does not match checkpoint: {}",
                    fields.join("; ")
                ))));
            }
        }
        let net = EfaNet::new(ck.config.model.clone()).checkpoint()?;
        let mut params = net.init_params::<f32>(0);
        ck.restore_params(&mut params).checkpoint()?;
        Ok(Self { config: ck.config, net, params })
    }

    /// `σ(S1)` for one image at its own resolution: the image is resized to the
    /// model's input size and the probability map resized back.
    pub fn predict(&self, image: &Image) -> efanet::Result<Vec<f64>> {
        let size = self.config.aug.target_size;
        let want = self.config.model.backbone.input_channels;
        let input = match_channels(image, want)?.resize_bilinear(size, size);
        let probs = self.net.predict(&self.params, input.to_tensor::<f32>())?;
        let map = Image::from_vec(1, size, size, probs.into_vec())?.resize_bilinear(image.height, image.width);
        Ok(map.data.iter().map(|&p| (p as f64).clamp(0.0, 1.0)).collect())
    }
}

/// Averages colour to grey or replicates grey to colour.
fn match_channels(image: &Image, want: usize) -> efanet::Result<Image> {
    if image.channels == want {
        return Ok(image.clone());
    }
    let n = image.plane_len();
    let grey: Vec<f32> = (0..n).map(|p| (0..image.channels).map(|c| image.data[c * n + p]).sum::<f32>() / image.channels as f32).collect();
    Image::from_vec(want, image.height, image.width, grey.repeat(want))
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub split: Option<String>,
    /// Scores the ground truth against itself instead of running the model.
    pub oracle: bool,
    pub out_dir: Option<PathBuf>,
    pub config: Option<RunConfig>,
}

pub const REPORT_FILE: &str = "report.tsv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CURVES_FILE: &str = "curves.tsv";

pub fn evaluate(checkpoint: &Path, manifest: &Path, opts: &EvalOptions) -> CliResult<(MetricReport, CurveSet)> {
    let model = Restored::load(checkpoint, opts.config.as_ref())?;
    let manifest = DatasetManifest::load(manifest).input()?;
    manifest.validate_files().input()?;
    let split = opts.split.clone().unwrap_or_else(|| model.config.test_split.clone());
    let records = manifest.split(&split);
    if records.is_empty() {
        return Err(CliError::Input(Error::Config(format!("manifest has no `{split}` records"))));
    }
    let metric_cfg = model.config.metrics;
    let scored = records
        .par_iter()
        .map(|r| -> efanet::Result<_> {
            let mask = efanet::data::io::read_mask(&manifest.resolve(&r.mask))?;
            let pred = if opts.oracle {
                mask.data.iter().map(|&v| v as f64).collect()
            } else {
                let image = read_image(&manifest.resolve(&r.image))?;
                if (image.height, image.width) != (mask.height, mask.width) {
                    return Err(Error::Shape(format!("record `{}`: image and mask sizes differ", r.id)));
                }
                model.predict(&image)?
            };
            let rec = evaluate_image(&r.id, &pred, &mask, &metric_cfg)?;
            Ok((rec, pred, mask))
        })
        .collect::<efanet::Result<Vec<(_, Vec<f64>, Mask)>>>()
        .input()?;
    let curves = pr_curves(scored.iter().map(|(_, p, m)| (p.as_slice(), m.data.as_slice())), metric_cfg.curve_beta2).internal()?;
    let report = MetricReport::new(metric_cfg, scored.into_iter().map(|(r, _, _)| r).collect());
    if let Some(dir) = &opts.out_dir {
        let write = |name: &str, text: String| {
            fs::create_dir_all(dir)
                .and_then(|_| fs::write(dir.join(name), text))
                .map_err(|e| Error::Io { path: dir.join(name), source: e })
                .input()
        };
        write(REPORT_FILE, report.to_tsv())?;
        write(SUMMARY_FILE, format!("split = {split}\noracle = {}\n{}", opts.oracle, report.summary()))?;
        write(CURVES_FILE, curves.to_tsv())?;
    }
    Ok((report, curves))
}

/// Writes `σ(S1)` at the input image's resolution as an 8-bit PGM, plus an
/// optional raw float tensor.
pub fn predict(checkpoint: &Path, image: &Path, out: &Path, raw: Option<&Path>) -> CliResult<Vec<f64>> {
    let model = Restored::load(checkpoint, None)?;
    let img = read_image(image).input()?;
    let probs = model.predict(&img).internal()?;
    let as_f32: Vec<f32> = probs.iter().map(|&p| p as f32).collect();
    write_probability_pgm(out, img.height, img.width, &as_f32).input()?;
    if let Some(raw) = raw {
        write_efat(raw, &[1, 1, img.height, img.width], &as_f32).input()?;
    }
    Ok(probs)
}

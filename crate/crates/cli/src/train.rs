use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use efanet::autodiff::Adam;
use efanet::data::{augment, collate, rescale, scaled_size, DatasetManifest, SegSample};
use efanet::{Checkpoint, EfaNet, Error, LossBreakdown, ParamStore, RunConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Classify, CliError, CliResult};

pub const LOG_FILE: &str = "train_log.tsv";
pub const FINAL_CHECKPOINT: &str = "final.efac";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.efac";

/// Loads every record of `split`, resized to `size x size`.
pub fn load_split(manifest: &DatasetManifest, split: &str, size: usize, edge_radius: usize) -> CliResult<Vec<SegSample>> {
    manifest
        .split(split)
        .par_iter()
        .map(|r| {
            let s = SegSample::load(manifest, r, edge_radius)?;
            rescale(&s, size, edge_radius)
        })
        .collect::<efanet::Result<Vec<_>>>()
        .input()
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub steps: u64,
    pub losses: Vec<LossBreakdown>,
    pub params: ParamStore<f32>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().map(|l| l.total)
    }
}

pub fn total_steps(config: &RunConfig, train_len: usize) -> u64 {
    let o = &config.optim;
    let per_epoch = train_len.div_ceil(o.batch_size) as u64;
    let by_epochs = o.epochs as u64 * per_epoch;
    match (o.epochs, o.max_steps) {
        (0, m) => m,
        (_, 0) => by_epochs,
        (_, m) => by_epochs.min(m),
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e }).input()
}

fn log_header() -> &'static str {
    "step\tepoch\tsize\tlr\tseg1\tseg2\tseg3\tseg4\tedge\ttotal\n"
}

fn log_row(step: u64, epoch: usize, size: usize, lr: f64, l: &LossBreakdown) -> String {
    let mut row = format!("{step}\t{epoch}\t{size}\t{lr:e}");
    for v in l.seg.iter().chain([&l.edge, &l.total]) {
        let _ = write!(row, "\t{v:.8}");
    }
    row.push('\n');
    row
}

/// Full training run. Writes `config.txt`, the loss log, periodic and final
/// checkpoints under `config.out_dir`.
pub fn train(config: &RunConfig, mut progress: impl FnMut(u64, u64, &LossBreakdown)) -> CliResult<TrainOutcome> {
    config.validate().input()?;
    let manifest = DatasetManifest::load(&config.manifest).input()?;
    manifest.validate_files().input()?;
    let aug = &config.aug;
    let data = load_split(&manifest, &config.train_split, aug.target_size, aug.edge_radius)?;
    if data.is_empty() {
        return Err(CliError::Input(Error::Config(format!(
            "manifest {} has no `{}` records",
            config.manifest.display(),
            config.train_split
        ))));
    }
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::Io { path: out.clone(), source: e }).input()?;
    write_text(&out.join("config.txt"), &config.to_text())?;

    let net = EfaNet::new(config.model.clone()).input()?;
    let mut params = net.init_params::<f32>(config.seed);
    let mut adam = Adam::new(config.optim.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let total = total_steps(config, data.len());
    let batch = config.optim.batch_size;
    let mut log = String::from(log_header());
    let log_path = out.join(LOG_FILE);
    let mut losses = Vec::new();
    let mut step = 0u64;
    let mut epoch = 0usize;
    let mut order: Vec<usize> = (0..data.len()).collect();
    while step < total {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            if step >= total {
                break;
            }
            // a lone sample would leave batch-norm statistics degenerate
            if chunk.len() == 1 && batch > 1 {
                continue;
            }
            let ratio = *aug.scale_ratios.choose(&mut rng).expect("validated non-empty");
            let size = scaled_size(aug.target_size, ratio);
            let samples = chunk
                .iter()
                .map(|&i| augment(&data[i], &mut rng, aug).and_then(|s| rescale(&s, size, aug.edge_radius)))
                .collect::<efanet::Result<Vec<_>>>()
                .internal()?;
            let (x, g, e) = collate::<f32>(&samples).internal()?;
            let lr = config.optim.schedule.lr_at(config.optim.lr, step, total);
            adam.set_lr(lr);
            let breakdown = match net.train_step(&mut params, &mut adam, x, &g, &e) {
                Ok(b) => b,
                Err(source @ Error::NonFinite(_)) => {
                    let last_good = out.join(LAST_GOOD_CHECKPOINT);
                    Checkpoint::capture(config, step, &params, Some(&adam)).save(&last_good).checkpoint()?;
                    write_text(&log_path, &log)?;
                    return Err(CliError::Numeric { step, last_good, source });
                }
                Err(e) => return Err(CliError::Internal(e)),
            };
            step += 1;
            log.push_str(&log_row(step, epoch, size, lr, &breakdown));
            progress(step, total, &breakdown);
            losses.push(breakdown);
            let every = config.optim.checkpoint_every;
            if every > 0 && step.is_multiple_of(every) {
                Checkpoint::capture(config, step, &params, Some(&adam))
                    .save(&out.join(format!("step_{step:06}.efac")))
                    .checkpoint()?;
                write_text(&log_path, &log)?;
            }
        }
        epoch += 1;
    }
    write_text(&log_path, &log)?;
    let checkpoint = out.join(FINAL_CHECKPOINT);
    Checkpoint::capture(config, step, &params, Some(&adam)).save(&checkpoint).checkpoint()?;
    Ok(TrainOutcome { steps: step, losses, params, checkpoint, log: log_path })
}

//! Commands behind the `efanet` binary: synthetic data generation, training,
//! evaluation, prediction and cost analysis.

pub mod error;
pub mod eval;
pub mod train;

use std::path::Path;

use efanet::data::synth::{synth_blob_dataset, SynthConfig};
use efanet::{CostReport, DatasetManifest, EfaNet, RunConfig};

pub use error::{CliError, CliResult};
pub use eval::{evaluate, predict, EvalOptions, Restored};
pub use train::{train, TrainOutcome};

use error::Classify;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "EFANET_THREADS";

/// Sizes the global worker pool from `EFANET_THREADS` when set.
pub fn configure_threads() -> CliResult<Option<usize>> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(efanet::Error::Config(format!("{THREADS_ENV} = `{v}` is not a positive integer"))))?;
    // a pool already built by the embedding process keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(Some(n))
}

pub fn synth(n: usize, size: usize, seed: u64, out: &Path) -> CliResult<DatasetManifest> {
    let config = SynthConfig { size, ..SynthConfig::default() };
    synth_blob_dataset(n, &config, seed, out).input()
}

pub fn analyze(config: &RunConfig, res: usize) -> CliResult<CostReport> {
    let net = EfaNet::new(config.model.clone()).input()?;
    net.analyze(res, res).input()
}

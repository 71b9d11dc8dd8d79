use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use efanet::RunConfig;
use efanet_cli::{configure_threads, CliError, CliResult, EvalOptions};

#[derive(Parser)]
#[command(name = "efanet", version, about = "Polyp segmentation: synth, train, eval, predict, analyze")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint on one split of a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: Option<String>,
        /// Directory for report.tsv, summary.txt and curves.tsv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Config whose model section must match the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Evaluate the ground truth as its own prediction.
        #[arg(long)]
        oracle: bool,
    },
    /// Write the probability map of one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the raw float map.
        #[arg(long)]
        raw: Option<PathBuf>,
    },
    /// Parameter and FLOP counts at a square input resolution.
    Analyze {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        res: usize,
    },
    /// Generate the synthetic blob dataset.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &std::path::Path) -> CliResult<RunConfig> {
    RunConfig::load(path).map_err(CliError::Input)
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Train { config } => {
            let config = load_config(&config)?;
            let start = Instant::now();
            let outcome = efanet_cli::train(&config, |step, total, l| {
                if step == 1 || step % 25 == 0 || step == total {
                    eprintln!("step {step}/{total} loss {:.4} ({:.0}s)", l.total, start.elapsed().as_secs_f64());
                }
            })?;
            println!(
                "trained {} steps, final loss {:.4}; checkpoint {}",
                outcome.steps,
                outcome.final_loss().unwrap_or(f64::NAN),
                outcome.checkpoint.display()
            );
        }
        Command::Eval { checkpoint, manifest, split, out, config, oracle } => {
            let config = config.as_deref().map(load_config).transpose()?;
            let opts = EvalOptions { split, oracle, out_dir: out, config };
            let (report, curves) = efanet_cli::evaluate(&checkpoint, &manifest, &opts)?;
            print!("{}", report.summary());
            println!("max_f_curve = {:.6}", curves.max_f());
        }
        Command::Predict { checkpoint, image, out, raw } => {
            efanet_cli::predict(&checkpoint, &image, &out, raw.as_deref())?;
            println!("wrote {}", out.display());
        }
        Command::Analyze { config, res } => {
            let config = config.as_deref().map(load_config).transpose()?.unwrap_or_default();
            print!("{}", efanet_cli::analyze(&config, res)?.to_tsv());
        }
        Command::Synth { n, size, seed, out } => {
            let m = efanet_cli::synth(n, size, seed, &out)?;
            println!("wrote {} records to {}", m.records.len(), out.join("manifest.tsv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.to_exit()
        }
    }
}

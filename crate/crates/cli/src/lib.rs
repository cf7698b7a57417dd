//! `icafusion` command-line front end.
//!
//! Every command returns an exit code: 0 on success, 2 for configuration
//! and usage errors, 3 for data problems, 4 when training aborts on a
//! non-finite value.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use icafusion_core::generator::Variant;

use crate::config::{Overrides, RunConfig};
use crate::error::{CliResult, EXIT_OK};

#[derive(Debug, Parser)]
#[command(name = "icafusion", version, about = "Infrared/visible image fusion with attention GANs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a generator and its two critics.
    Train(TrainArgs),
    /// Fuse an infrared/visible pair (or two directories of them).
    Fuse(FuseArgs),
    /// Score fused images against their sources.
    Eval(EvalArgs),
    /// Train and score all seven attention variants.
    Ablate(RunArgs),
}

/// Options shared by `train` and `ablate`. Flags beat `ICAFUSION_*`
/// variables, which beat the config file.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long, env = "ICAFUSION_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "ICAFUSION_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "ICAFUSION_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    /// Replace existing outputs.
    #[arg(long, env = "ICAFUSION_OVERWRITE")]
    pub overwrite: bool,
    /// Generator variant, e.g. `full`, `no_attention`, `only_vis_com`.
    #[arg(long, env = "ICAFUSION_VARIANT")]
    pub variant: Option<Variant>,
    #[arg(long, env = "ICAFUSION_DEVICE")]
    pub device: Option<String>,
    /// Directory of `<id>_ir.*` / `<id>_vis.*` pairs.
    #[arg(long, env = "ICAFUSION_DATASET")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
}

impl RunArgs {
    /// The config file (or defaults) with every given override applied.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load_or_default(self.config.as_deref())?;
        cfg.apply(&Overrides {
            seed: self.seed,
            out_dir: self.out_dir.clone(),
            variant: self.variant,
            device: self.device.clone(),
            dataset_dir: self.dataset.clone(),
            epochs: self.epochs,
            batch_size: self.batch,
            max_steps: self.max_steps,
        });
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FuseArgs {
    #[arg(long, env = "ICAFUSION_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub ir: PathBuf,
    #[arg(long)]
    pub vis: PathBuf,
    /// Output PNG, or output directory in batch mode.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "ICAFUSION_OVERWRITE")]
    pub overwrite: bool,
    #[arg(long, env = "ICAFUSION_DEVICE", default_value = "cpu")]
    pub device: String,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub fused: PathBuf,
    #[arg(long)]
    pub ir: PathBuf,
    #[arg(long)]
    pub vis: PathBuf,
    /// CSV of per-image metrics plus a `mean` row.
    #[arg(long)]
    pub out: PathBuf,
    /// Also draw the metrics to a PNG next to the CSV.
    #[arg(long)]
    pub plots: bool,
    #[arg(long, env = "ICAFUSION_OVERWRITE")]
    pub overwrite: bool,
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Train(a) => {
            let cfg = a.run.resolve()?;
            let s = commands::cmd_train(&cfg, a.run.overwrite, a.resume.as_deref())?;
            println!("steps {}", s.steps);
            println!("checkpoint {}", s.checkpoint.display());
            println!("param_hash {}", s.param_hash);
        }
        Command::Fuse(a) => {
            commands::require_cpu(&a.device)?;
            for p in commands::cmd_fuse(&a.checkpoint, &a.ir, &a.vis, &a.out, a.overwrite)? {
                println!("{}", p.display());
            }
        }
        Command::Eval(a) => {
            let s = commands::cmd_eval(&a.fused, &a.ir, &a.vis, &a.out, a.plots, a.overwrite)?;
            println!("{} images scored, {} skipped", s.rows.len(), s.skipped.len());
            for (name, v) in icafusion_core::metrics::METRIC_NAMES.iter().zip(s.mean.values()) {
                println!("{name} {v:.6}");
            }
        }
        Command::Ablate(a) => {
            let cfg = a.resolve()?;
            print!("{}", commands::cmd_ablate(&cfg, a.overwrite)?.to_csv());
        }
    }
    Ok(())
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

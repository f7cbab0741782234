//! `scan` — sub-cluster-aware network training and few-shot evaluation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure (non-finite values during training or evaluation).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scan_core::error::ScanError;

use scan_cli::commands::eval::{EvalArgs, EvalOverrides};
use scan_cli::commands::pretrain::{mode_from_flags, PretrainArgs};
use scan_cli::commands::{analyze, eval, pretrain, resolve_config, synth};

#[derive(Parser, Debug)]
#[command(
    name = "scan",
    version,
    about = "Sub-cluster-aware representation learning and few-shot evaluation"
)]
struct Cli {
    /// Run configuration file (flat `key = value` text).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed, overriding the configured one.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Overwrite outputs that already exist.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate the synthetic sub-clustered dataset.
    Synth {
        /// Dataset directory to create.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train on the base split and write checkpoints.
    Pretrain {
        /// Dataset directory (holds manifest.csv).
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Checkpoint directory to create or continue.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Class branch only (no clustering objective).
        #[arg(long)]
        baseline: bool,
        /// Full branches but no purity refinement.
        #[arg(long)]
        no_purity: bool,
        /// Continue a checkpoint written with the same config.
        #[arg(long)]
        resume: bool,
        /// Stop after this many additional epochs (checkpoint stays resumable).
        #[arg(long, value_name = "N")]
        stop_after: Option<usize>,
    },
    /// Episodic few-shot evaluation on the novel split.
    Eval {
        /// Checkpoint directory.
        #[arg(long, value_name = "DIR")]
        ckpt: PathBuf,
        /// Dataset directory (holds manifest.csv).
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Episode scores CSV (default: <ckpt>/eval_episodes.csv).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Classes per episode.
        #[arg(long, value_name = "N")]
        n_way: Option<usize>,
        /// Support shots per class.
        #[arg(long, value_name = "K")]
        k_shot: Option<usize>,
        /// Query samples per class.
        #[arg(long, value_name = "Q")]
        q: Option<usize>,
        /// Number of episodes.
        #[arg(long, value_name = "E")]
        episodes: Option<usize>,
    },
    /// Cluster quality, feature discriminability, and embedding dumps.
    Analyze {
        /// Checkpoint directory.
        #[arg(long, value_name = "DIR")]
        ckpt: PathBuf,
        /// Dataset directory (holds manifest.csv).
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Report directory (default: the checkpoint directory).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> scan_core::error::Result<()> {
    match cli.cmd {
        Cmd::Synth { out } => {
            let cfg = resolve_config(cli.config.as_deref(), cli.seed)?;
            synth::run(&cfg, &out, cli.force)
        }
        Cmd::Pretrain { data, out, baseline, no_purity, resume, stop_after } => {
            let cfg = resolve_config(cli.config.as_deref(), cli.seed)?;
            cfg.validate()?;
            let args = PretrainArgs {
                data,
                out,
                mode: mode_from_flags(baseline, no_purity)?,
                resume,
                stop_after,
                force: cli.force,
            };
            pretrain::run(&cfg, &args)
        }
        Cmd::Eval { ckpt, data, out, n_way, k_shot, q, episodes } => {
            let args = EvalArgs {
                ckpt,
                data,
                out,
                overrides: EvalOverrides { n_way, k_shot, q_per_class: q, episodes },
                force: cli.force,
            };
            eval::run(&args, cli.config.as_deref(), cli.seed)
        }
        Cmd::Analyze { ckpt, data, out } => analyze::run(&analyze::AnalyzeArgs {
            ckpt,
            data,
            out,
            force: cli.force,
        }),
    }
}

fn exit_code(e: &ScanError) -> u8 {
    match e {
        ScanError::Config(_) => 2,
        ScanError::Data(_) | ScanError::Shape(_) | ScanError::Io { .. } => 3,
        ScanError::Numeric(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Clap exits 0 for --help/--version and 2 for usage errors.
        Err(e) => e.exit(),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

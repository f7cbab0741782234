//! `scan pretrain` — train on the base split, checkpointing as it goes.

use std::path::PathBuf;

use scan_core::data::{load_split, Split};
use scan_core::error::{Result, ScanError};
use scan_core::train::{TrainMode, Trainer};

use crate::checkpoint::{load_checkpoint, save_checkpoint, sha256_hex, DirLock, TrainingLog};
use crate::config::RunConfig;

#[derive(Debug)]
pub struct PretrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub mode: TrainMode,
    pub resume: bool,
    /// Train at most this many epochs before exiting (for staged runs).
    pub stop_after: Option<usize>,
    pub force: bool,
}

pub fn run(cfg: &RunConfig, args: &PretrainArgs) -> Result<()> {
    let split = load_split(&args.data.join("manifest.csv"), Split::Base)?;
    let config_text = cfg.serialize();
    let config_sha = sha256_hex(&config_text);

    let _lock = DirLock::acquire(&args.out)?;
    let has_checkpoint = args.out.join("meta.txt").exists();

    let mut trainer = if has_checkpoint && args.resume {
        let loaded = load_checkpoint(&args.out)?;
        if loaded.meta.config_sha256 != config_sha {
            return Err(ScanError::config(format!(
                "resume-mismatch: {} was written with a different configuration",
                args.out.display()
            )));
        }
        if loaded.meta.mode != args.mode {
            return Err(ScanError::config(format!(
                "resume-mismatch: checkpoint mode is '{}', requested '{}'",
                loaded.meta.mode.as_str(),
                args.mode.as_str()
            )));
        }
        Trainer::from_state(
            cfg.train_config(args.mode),
            loaded.model,
            loaded.arena,
            loaded.banks,
            loaded.meta.epoch,
            split.data,
            split.class_indices,
        )?
    } else {
        if has_checkpoint && !args.force {
            return Err(ScanError::config(format!(
                "{} already holds a checkpoint (pass --resume to continue it or --force to start over)",
                args.out.display()
            )));
        }
        if args.resume {
            return Err(ScanError::config(format!(
                "nothing to resume in {}",
                args.out.display()
            )));
        }
        Trainer::new(
            cfg.train_config(args.mode),
            cfg.model_config(split.n_classes()),
            split.data,
            split.class_indices,
        )?
    };

    let start_epoch = trainer.epochs_done();
    let mut log = TrainingLog::start(&args.out.join("training_log.csv"), &config_sha, start_epoch)?;
    let stop_at = match args.stop_after {
        Some(n) => (start_epoch + n).min(cfg.epochs),
        None => cfg.epochs,
    };

    let mut saved_at = None;
    while trainer.epochs_done() < stop_at {
        let record = trainer.step_epoch()?;
        log.append(&record)?;
        print_epoch(&record, cfg.epochs);
        let done = trainer.epochs_done();
        if done % cfg.checkpoint_every == 0 || done == stop_at {
            save_checkpoint(&args.out, cfg, &trainer)?;
            saved_at = Some(done);
        }
    }
    if saved_at != Some(trainer.epochs_done()) {
        save_checkpoint(&args.out, cfg, &trainer)?;
    }
    let state = if trainer.epochs_done() < cfg.epochs { "paused" } else { "finished" };
    println!(
        "{state} at epoch {}/{}; checkpoint in {}",
        trainer.epochs_done(),
        cfg.epochs,
        args.out.display()
    );
    Ok(())
}

fn print_epoch(r: &scan_core::train::EpochRecord, total: usize) {
    let mut line = format!(
        "epoch {:>4}/{total}  class {:.4}  cluster {:.4}  purity {:.4}  total {:.4}",
        r.epoch, r.class_loss, r.cluster_loss, r.purity_loss, r.total
    );
    if let Some(err) = r.cluster_error_rate {
        line.push_str(&format!("  cluster_err {err:.4}"));
    }
    println!("{line}");
}

/// Re-exported for `main`: pretrain mode from the two ablation flags.
pub fn mode_from_flags(baseline: bool, no_purity: bool) -> Result<TrainMode> {
    match (baseline, no_purity) {
        (true, true) => Err(ScanError::config(
            "--baseline and --no-purity are mutually exclusive".to_string(),
        )),
        (true, false) => Ok(TrainMode::Baseline),
        (false, true) => Ok(TrainMode::NoPurity),
        (false, false) => Ok(TrainMode::Full),
    }
}

//! `scan eval` — frozen-encoder episodic evaluation on the novel split.

use std::fs;
use std::path::{Path, PathBuf};

use scan_core::data::{load_split, Split};
use scan_core::error::{Result, ScanError};
use scan_core::fewshot::run_episodes;

use crate::checkpoint::load_checkpoint;
use crate::commands::{embed_normalized, ensure_overwritable, Stage};
use crate::config::RunConfig;

#[derive(Debug, Default)]
pub struct EvalOverrides {
    pub n_way: Option<usize>,
    pub k_shot: Option<usize>,
    pub q_per_class: Option<usize>,
    pub episodes: Option<usize>,
}

#[derive(Debug)]
pub struct EvalArgs {
    pub ckpt: PathBuf,
    pub data: PathBuf,
    pub out: Option<PathBuf>,
    pub overrides: EvalOverrides,
    pub force: bool,
}

pub fn run(
    args: &EvalArgs,
    config_path: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let mut loaded = load_checkpoint(&args.ckpt)?;
    let mut cfg = effective_config(&loaded.run_cfg, loaded.meta.n_classes, config_path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let o = &args.overrides;
    if let Some(v) = o.n_way {
        cfg.n_way = v;
    }
    if let Some(v) = o.k_shot {
        cfg.k_shot = v;
    }
    if let Some(v) = o.q_per_class {
        cfg.q_per_class = v;
    }
    if let Some(v) = o.episodes {
        cfg.episodes = v;
    }
    let eval_cfg = cfg.eval_config();
    eval_cfg.validate()?;

    let out_path = args.out.clone().unwrap_or_else(|| args.ckpt.join("eval_episodes.csv"));
    ensure_overwritable(&out_path, args.force)?;

    let split = load_split(&args.data.join("manifest.csv"), Split::Novel)?;
    let features = embed_normalized(
        &loaded.model,
        &mut loaded.arena,
        &split.data,
        cfg.batch_size,
        Stage::Backbone,
    )?;
    let report = run_episodes(&features, &split.class_indices, &eval_cfg)?;

    let mut csv = format!(
        "# episodic evaluation: n_way={} k_shot={} q_per_class={} episodes={} seed={}\n\
         episode,accuracy,macro_f1\n",
        eval_cfg.n_way, eval_cfg.k_shot, eval_cfg.q_per_class, eval_cfg.episodes, eval_cfg.seed
    );
    for (i, r) in report.results.iter().enumerate() {
        csv.push_str(&format!("{i},{},{}\n", r.accuracy, r.macro_f1));
    }
    fs::write(&out_path, csv).map_err(|e| ScanError::io(&out_path, e))?;

    println!(
        "eval summary: N={} K={} q={} E={} seed={}",
        eval_cfg.n_way, eval_cfg.k_shot, eval_cfg.q_per_class, eval_cfg.episodes, eval_cfg.seed
    );
    println!(
        "accuracy = {:.2} ± {:.2} %",
        100.0 * report.accuracy.mean,
        100.0 * report.accuracy.half_width
    );
    println!(
        "macro_f1 = {:.2} ± {:.2} %",
        100.0 * report.macro_f1.mean,
        100.0 * report.macro_f1.half_width
    );
    if report.degenerate_episodes > 0 {
        println!("degenerate support sets: {}", report.degenerate_episodes);
    }
    println!("episode scores written to {}", out_path.display());
    Ok(())
}

/// The checkpoint's stored config is the source of truth for the
/// architecture; a `--config` file may replace the evaluation knobs but must
/// describe the same network.
fn effective_config(
    stored: &RunConfig,
    n_classes: usize,
    config_path: Option<&Path>,
) -> Result<RunConfig> {
    match config_path {
        None => Ok(stored.clone()),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| ScanError::io(path, e))?;
            let file_cfg = RunConfig::parse(&text)?;
            if file_cfg.model_config(n_classes) != stored.model_config(n_classes) {
                return Err(ScanError::config(format!(
                    "{} describes a different architecture than the checkpoint",
                    path.display()
                )));
            }
            Ok(file_cfg)
        }
    }
}

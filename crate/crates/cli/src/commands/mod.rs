//! Subcommand implementations and the plumbing they share.

pub mod analyze;
pub mod eval;
pub mod pretrain;
pub mod synth;

use std::fs;
use std::path::Path;

use scan_core::error::{Result, ScanError};
use scan_core::layer::ParamArena;
use scan_core::model::ScanModel;
use scan_core::tensor::Tensor;
use scan_core::train::stack_rows;

use crate::config::RunConfig;

/// Resolves the effective run configuration: defaults, then the `--config`
/// file if given, then the `--seed` override.
pub fn resolve_config(config_path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match config_path {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| ScanError::io(path, e))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Refuses to clobber `path` unless `--force` was given.
pub fn ensure_overwritable(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(ScanError::config(format!(
            "{} already exists (pass --force to overwrite)",
            path.display()
        )));
    }
    Ok(())
}

/// Which embedding a report reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Encoder output — the representation episodic evaluation uses.
    Backbone,
    /// Projection output — the representation clustering and memory use.
    Projected,
}

/// Embeds every sample of `data` in eval mode, batch by batch, and
/// L2-normalizes each row. A row the network zeroed out entirely gets the
/// uniform direction `1/sqrt(d)`; non-finite embeddings abort.
pub fn embed_normalized(
    model: &ScanModel,
    arena: &mut ParamArena,
    data: &Tensor,
    batch_size: usize,
    stage: Stage,
) -> Result<Tensor> {
    let n = data.rows();
    let idxs: Vec<usize> = (0..n).collect();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for chunk in idxs.chunks(batch_size.max(1)) {
        let x = stack_rows(data, chunk)?;
        let f = match stage {
            Stage::Backbone => model.embed_backbone(arena, &x)?,
            Stage::Projected => model.embed_projected(arena, &x)?,
        };
        for bi in 0..chunk.len() {
            rows.push(f.row(bi).to_vec());
        }
    }
    let dim = rows.first().map_or(0, Vec::len);
    for (i, row) in rows.iter_mut().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(ScanError::numeric(format!("non-finite embedding for sample {i}")));
        }
        if norm == 0.0 {
            row.fill(1.0 / (dim as f64).sqrt());
        } else {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    Tensor::from_rows(&rows)
}

//! Checkpoint directory layout and persistence.
//!
//! A checkpoint directory contains everything needed to reproduce training
//! bit-for-bit from the stored epoch:
//!
//! ```text
//! config.txt           canonical run config (the hash target)
//! meta.txt             epoch, seed, mode, head sizes, config hash
//! params/<name>.sct    every parameter and buffer, by stable arena name
//! momentum/<name>.sct  optimizer momentum, aligned with params/
//! banks/…              memory banks when the joint phase has started
//! training_log.csv     one row per epoch (pretrain only)
//! LOCK                 present while a writer owns the directory
//! ```
//!
//! `meta.txt` is written last, so a directory with a readable meta file is a
//! complete checkpoint.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use scan_core::data::tensor_file::{read_tensor_file, write_tensor_file_f64};
use scan_core::error::{Result, ScanError};
use scan_core::layer::ParamArena;
use scan_core::memory::{MemoryBanks, MemoryParts};
use scan_core::model::ScanModel;
use scan_core::rng::SeededRng;
use scan_core::train::{EpochRecord, TrainMode, Trainer};

use crate::config::RunConfig;

pub const FORMAT_VERSION: u64 = 1;

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub format_version: u64,
    pub epoch: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub n_classes: usize,
    pub n_clusters: usize,
    pub memory_initialized: bool,
    pub config_sha256: String,
}

impl CheckpointMeta {
    pub fn serialize(&self) -> String {
        format!(
            "format_version = {}\nepoch = {}\nseed = {}\nmode = {}\nn_classes = {}\n\
             n_clusters = {}\nmemory_initialized = {}\nconfig_sha256 = {}\n",
            self.format_version,
            self.epoch,
            self.seed,
            self.mode.as_str(),
            self.n_classes,
            self.n_clusters,
            self.memory_initialized,
            self.config_sha256,
        )
    }

    pub fn parse(text: &str) -> Result<CheckpointMeta> {
        let mut map = std::collections::BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ScanError::data(format!("malformed meta line '{line}'")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut get = |key: &str| {
            map.remove(key).ok_or_else(|| ScanError::data(format!("meta.txt missing '{key}'")))
        };
        let parse_err = |key: &str, v: &str| ScanError::data(format!("meta.txt: bad {key} '{v}'"));
        let format_version: u64 = {
            let v = get("format_version")?;
            v.parse().map_err(|_| parse_err("format_version", &v))?
        };
        if format_version != FORMAT_VERSION {
            return Err(ScanError::data(format!(
                "unsupported checkpoint format version {format_version} (expected {FORMAT_VERSION})"
            )));
        }
        let epoch: usize = {
            let v = get("epoch")?;
            v.parse().map_err(|_| parse_err("epoch", &v))?
        };
        let seed: u64 = {
            let v = get("seed")?;
            v.parse().map_err(|_| parse_err("seed", &v))?
        };
        let mode = TrainMode::parse(&get("mode")?)?;
        let n_classes: usize = {
            let v = get("n_classes")?;
            v.parse().map_err(|_| parse_err("n_classes", &v))?
        };
        let n_clusters: usize = {
            let v = get("n_clusters")?;
            v.parse().map_err(|_| parse_err("n_clusters", &v))?
        };
        let memory_initialized: bool = {
            let v = get("memory_initialized")?;
            v.parse().map_err(|_| parse_err("memory_initialized", &v))?
        };
        let config_sha256 = get("config_sha256")?;
        if let Some(key) = map.keys().next() {
            return Err(ScanError::data(format!("meta.txt has unknown key '{key}'")));
        }
        Ok(CheckpointMeta {
            format_version,
            epoch,
            seed,
            mode,
            n_classes,
            n_clusters,
            memory_initialized,
            config_sha256,
        })
    }
}

/// Exclusive ownership of a checkpoint directory while writing. The lock
/// file disappears when the guard drops; a leftover file from a crashed run
/// must be removed by hand (the error says which file).
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<DirLock> {
        fs::create_dir_all(dir).map_err(|e| ScanError::io(dir, e))?;
        let path = dir.join("LOCK");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(ScanError::data(format!(
                "{} is locked by another writer (delete the LOCK file if that run is gone)",
                dir.display()
            ))),
            Err(e) => Err(ScanError::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| ScanError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| ScanError::io(path, e))
}

/// Writes the complete training state. `meta.txt` goes last so partial
/// writes never masquerade as checkpoints.
pub fn save_checkpoint(dir: &Path, run_cfg: &RunConfig, trainer: &Trainer) -> Result<()> {
    let params_dir = dir.join("params");
    let momentum_dir = dir.join("momentum");
    fs::create_dir_all(&params_dir).map_err(|e| ScanError::io(&params_dir, e))?;
    fs::create_dir_all(&momentum_dir).map_err(|e| ScanError::io(&momentum_dir, e))?;

    let config_text = run_cfg.serialize();
    write_text(&dir.join("config.txt"), &config_text)?;

    let mut seen = std::collections::HashSet::new();
    for state in trainer.arena.iter() {
        if !seen.insert(state.name.clone()) {
            return Err(ScanError::data(format!("duplicate parameter name '{}'", state.name)));
        }
        write_tensor_file_f64(&params_dir.join(format!("{}.sct", state.name)), &state.value)?;
        write_tensor_file_f64(&momentum_dir.join(format!("{}.sct", state.name)), &state.momentum_buf)?;
    }

    if let Some(banks) = &trainer.banks {
        save_banks(&dir.join("banks"), banks)?;
    }

    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        epoch: trainer.epochs_done(),
        seed: run_cfg.seed,
        mode: trainer.cfg.mode,
        n_classes: trainer.model.cfg.heads.n_classes,
        n_clusters: trainer.model.cfg.heads.n_clusters,
        memory_initialized: trainer.banks.is_some(),
        config_sha256: sha256_hex(&config_text),
    };
    write_text(&dir.join("meta.txt"), &meta.serialize())
}

fn save_banks(dir: &Path, banks: &MemoryBanks) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ScanError::io(dir, e))?;
    let parts = banks.to_parts();
    write_tensor_file_f64(&dir.join("embeddings.sct"), &parts.embeddings)?;
    write_tensor_file_f64(&dir.join("class_centroids.sct"), &parts.class_centroids)?;
    write_tensor_file_f64(&dir.join("cluster_centroids.sct"), &parts.cluster_centroids)?;
    let mut labels = String::from("row,class,cluster\n");
    for (i, (c, s)) in parts.class_labels.iter().zip(&parts.cluster_labels).enumerate() {
        labels.push_str(&format!("{i},{c},{s}\n"));
    }
    write_text(&dir.join("labels.csv"), &labels)?;
    let mut stale = String::from("cluster,stale\n");
    for (s, flag) in parts.cluster_stale.iter().enumerate() {
        stale.push_str(&format!("{s},{flag}\n"));
    }
    write_text(&dir.join("stale.csv"), &stale)
}

fn load_banks(dir: &Path) -> Result<MemoryBanks> {
    let embeddings = read_tensor_file(&dir.join("embeddings.sct"))?;
    let class_centroids = read_tensor_file(&dir.join("class_centroids.sct"))?;
    let cluster_centroids = read_tensor_file(&dir.join("cluster_centroids.sct"))?;
    let labels_text = read_text(&dir.join("labels.csv"))?;
    let mut class_labels = Vec::new();
    let mut cluster_labels = Vec::new();
    for (i, line) in labels_text.lines().enumerate() {
        if i == 0 {
            if line != "row,class,cluster" {
                return Err(ScanError::data(format!("banks labels.csv: bad header '{line}'")));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(ScanError::data(format!("banks labels.csv: bad row '{line}'")));
        }
        let row: usize = fields[0]
            .parse()
            .map_err(|_| ScanError::data(format!("banks labels.csv: bad row id '{}'", fields[0])))?;
        if row + 1 != i {
            return Err(ScanError::data(format!(
                "banks labels.csv: row ids must be dense, got {row} at line {}",
                i + 1
            )));
        }
        class_labels.push(fields[1].parse().map_err(|_| {
            ScanError::data(format!("banks labels.csv: bad class label '{}'", fields[1]))
        })?);
        cluster_labels.push(fields[2].parse().map_err(|_| {
            ScanError::data(format!("banks labels.csv: bad cluster label '{}'", fields[2]))
        })?);
    }
    let stale_text = read_text(&dir.join("stale.csv"))?;
    let mut cluster_stale = Vec::new();
    for (i, line) in stale_text.lines().enumerate() {
        if i == 0 {
            if line != "cluster,stale" {
                return Err(ScanError::data(format!("banks stale.csv: bad header '{line}'")));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(ScanError::data(format!("banks stale.csv: bad row '{line}'")));
        }
        cluster_stale.push(fields[1].parse().map_err(|_| {
            ScanError::data(format!("banks stale.csv: bad stale flag '{}'", fields[1]))
        })?);
    }
    MemoryBanks::from_parts(MemoryParts {
        embeddings,
        class_labels,
        cluster_labels,
        class_centroids,
        cluster_centroids,
        cluster_stale,
    })
}

/// A checkpoint restored into a live model. Training resume additionally
/// wraps this into a `Trainer` via `Trainer::from_state`.
#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub run_cfg: RunConfig,
    pub meta: CheckpointMeta,
    pub arena: ParamArena,
    pub model: ScanModel,
    pub banks: Option<MemoryBanks>,
}

pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let meta_path = dir.join("meta.txt");
    if !meta_path.exists() {
        return Err(ScanError::data(format!("{} is not a checkpoint (no meta.txt)", dir.display())));
    }
    let meta = CheckpointMeta::parse(&read_text(&meta_path)?)?;
    let config_text = read_text(&dir.join("config.txt"))?;
    if sha256_hex(&config_text) != meta.config_sha256 {
        return Err(ScanError::data(format!(
            "{}: config.txt does not match the hash in meta.txt",
            dir.display()
        )));
    }
    let run_cfg = RunConfig::parse(&config_text)?;
    if run_cfg.seed != meta.seed {
        return Err(ScanError::data("meta.txt seed disagrees with config.txt".to_string()));
    }
    let model_cfg = run_cfg.model_config(meta.n_classes);
    if model_cfg.heads.n_clusters != meta.n_clusters {
        return Err(ScanError::data(format!(
            "meta.txt n_clusters {} disagrees with the configured rule ({})",
            meta.n_clusters, model_cfg.heads.n_clusters
        )));
    }

    // Rebuild the exact architecture (names and shapes), then overwrite
    // every value and momentum buffer from disk.
    let mut root = SeededRng::new(meta.seed);
    let mut arena = ParamArena::new();
    let model = ScanModel::new(model_cfg, &mut arena, &mut root)?;
    let params_dir = dir.join("params");
    let momentum_dir = dir.join("momentum");
    for state in arena.iter_mut() {
        let value = read_tensor_file(&params_dir.join(format!("{}.sct", state.name)))?;
        let momentum = read_tensor_file(&momentum_dir.join(format!("{}.sct", state.name)))?;
        if value.shape() != state.value.shape() || momentum.shape() != state.value.shape() {
            return Err(ScanError::data(format!(
                "checkpoint tensor '{}' has shape {:?}, expected {:?}",
                state.name,
                value.shape(),
                state.value.shape()
            )));
        }
        state.value = value;
        state.momentum_buf = momentum;
    }

    let banks = if meta.memory_initialized { Some(load_banks(&dir.join("banks"))?) } else { None };
    Ok(LoadedCheckpoint { run_cfg, meta, arena, model, banks })
}

pub const LOG_HEADER: &str = "epoch,loss_class,loss_cluster,loss_purity,loss_total,\
cluster_error_rate,active_triplets,skipped_triplets,nonempty_clusters";

pub fn log_row(r: &EpochRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        r.epoch,
        r.class_loss,
        r.cluster_loss,
        r.purity_loss,
        r.total,
        r.cluster_error_rate.map_or(String::new(), |v| v.to_string()),
        r.active_triplets,
        r.skipped_triplets,
        r.nonempty_clusters.map_or(String::new(), |v| v.to_string()),
    )
}

/// Appendable training log. Data rows are reproducible; the only timestamp
/// lives in a header comment.
#[derive(Debug)]
pub struct TrainingLog {
    file: fs::File,
    path: PathBuf,
}

impl TrainingLog {
    /// Creates (or, on resume, rewrites) the log. Existing data rows with
    /// epoch <= `keep_up_to` survive; later rows belong to the abandoned
    /// continuation and are dropped.
    pub fn start(path: &Path, config_sha256: &str, keep_up_to: usize) -> Result<TrainingLog> {
        let mut kept = Vec::new();
        if keep_up_to > 0 && path.exists() {
            for line in read_text(path)?.lines() {
                if line.starts_with('#') || line == LOG_HEADER || line.is_empty() {
                    continue;
                }
                let epoch: usize = line
                    .split(',')
                    .next()
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| ScanError::data(format!("training log: bad row '{line}'")))?;
                if epoch <= keep_up_to {
                    kept.push(line.to_string());
                }
            }
        }
        let mut text = format!(
            "# pretraining log\n# started {}\n# config_sha256 {}\n{}\n",
            chrono::Utc::now().to_rfc3339(),
            config_sha256,
            LOG_HEADER
        );
        for row in &kept {
            text.push_str(row);
            text.push('\n');
        }
        write_text(path, &text)?;
        let file = fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| ScanError::io(path, e))?;
        Ok(TrainingLog { file, path: path.to_path_buf() })
    }

    pub fn append(&mut self, record: &EpochRecord) -> Result<()> {
        let line = format!("{}\n", log_row(record));
        self.file.write_all(line.as_bytes()).map_err(|e| ScanError::io(&self.path, e))?;
        self.file.flush().map_err(|e| ScanError::io(&self.path, e))
    }
}

/// Splits a log file into its reproducible data rows, skipping comments and
/// the column header.
pub fn log_data_rows(text: &str) -> Vec<&str> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty() && *l != LOG_HEADER)
        .collect()
}

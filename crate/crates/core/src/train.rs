//! Pre-training loop: warm-up on the class loss, K-Means initialization of
//! the memory banks, then joint optimization of the class, cluster, and
//! purity losses with per-batch memory updates and epoch-end centroid
//! refresh.
//!
//! All randomness is drawn from substreams keyed by `(label, epoch)`, never
//! from a sequentially consumed stream, so a run resumed from a checkpoint
//! replays exactly the batches, dropout masks, and augmentations of the
//! uninterrupted run.

use crate::cluster::{cluster_error_rate, kmeans_fit, KMeansConfig};
use crate::data::augment::{augment, AugmentConfig};
use crate::error::{Result, ScanError};
use crate::layer::{Mode, ParamArena};
use crate::loss::{
    class_ce, cluster_ce, mine_batch, purity_loss, total_loss, LossBreakdown, LossConfig,
};
use crate::memory::{MemoryBanks, MemoryConfig};
use crate::model::{ModelConfig, ScanModel};
use crate::optim::{sgd_step, SgdConfig};
use crate::rng::SeededRng;
use crate::tensor::{slice_norm, Tensor};

/// Which loss branches participate in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Class + cluster + purity (the full objective).
    Full,
    /// Class + cluster, purity term disabled (ablation).
    NoPurity,
    /// Class branch only; no clustering, no memory banks.
    Baseline,
}

impl TrainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Full => "full",
            TrainMode::NoPurity => "no-purity",
            TrainMode::Baseline => "baseline",
        }
    }

    pub fn parse(s: &str) -> Result<TrainMode> {
        match s {
            "full" => Ok(TrainMode::Full),
            "no-purity" => Ok(TrainMode::NoPurity),
            "baseline" => Ok(TrainMode::Baseline),
            other => Err(ScanError::config(format!(
                "unknown training mode '{other}' (expected full|no-purity|baseline)"
            ))),
        }
    }
}

/// When cluster labels in the memory bank are refreshed from centroids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReassignCadence {
    /// Reassign each batch member right after its memory row update; the
    /// whole bank is still reassigned at epoch end.
    #[default]
    Batch,
    /// Only the epoch-end full reassignment.
    Epoch,
}

impl ReassignCadence {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReassignCadence::Batch => "batch",
            ReassignCadence::Epoch => "epoch",
        }
    }

    pub fn parse(s: &str) -> Result<ReassignCadence> {
        match s {
            "batch" => Ok(ReassignCadence::Batch),
            "epoch" => Ok(ReassignCadence::Epoch),
            other => Err(ScanError::config(format!(
                "unknown reassign cadence '{other}' (expected batch|epoch)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Total epochs, the first `warmup_epochs` of which train the class
    /// branch only.
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub loss: LossConfig,
    pub memory: MemoryConfig,
    pub mode: TrainMode,
    pub reassign: ReassignCadence,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            warmup_epochs: 5,
            batch_size: 32,
            sgd: SgdConfig::default(),
            loss: LossConfig::default(),
            memory: MemoryConfig::default(),
            mode: TrainMode::Full,
            reassign: ReassignCadence::default(),
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(ScanError::config("epochs must be positive".to_string()));
        }
        if self.batch_size == 0 {
            return Err(ScanError::config("batch_size must be positive".to_string()));
        }
        if self.mode != TrainMode::Baseline && self.warmup_epochs >= self.epochs {
            return Err(ScanError::config(format!(
                "warmup_epochs {} must be below epochs {} so at least one joint epoch runs",
                self.warmup_epochs, self.epochs
            )));
        }
        self.sgd.validate()?;
        self.loss.validate()?;
        self.memory.validate()?;
        self.augment.validate()?;
        Ok(())
    }
}

/// Per-epoch training log entry. Loss fields are means over the epoch's
/// batches; triplet counts are epoch sums. `cluster_error_rate` and
/// `nonempty_clusters` are `None` until the memory banks exist.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub class_loss: f64,
    pub cluster_loss: f64,
    pub purity_loss: f64,
    pub total: f64,
    pub cluster_error_rate: Option<f64>,
    pub active_triplets: usize,
    pub skipped_triplets: usize,
    pub nonempty_clusters: Option<usize>,
}

/// One forward/backward pass over a batch: accumulates gradients for every
/// branch in play and returns the loss breakdown plus the projected features
/// (used afterwards for memory updates).
///
/// * `banks = None`: class branch only (warm-up and baseline training).
/// * `banks = Some`, `use_purity = false`: class + cluster losses.
/// * `banks = Some`, `use_purity = true`: the full objective.
///
/// Cluster pseudo-labels and triplets are read from `banks` as-is, i.e. from
/// the state recorded before this batch's updates. Purity positives and
/// negatives are constants; only the anchor receives gradient, routed through
/// the row-normalization Jacobian.
pub fn training_step_loss(
    model: &ScanModel,
    arena: &mut ParamArena,
    banks: Option<&MemoryBanks>,
    x: &Tensor,
    class_labels: &[usize],
    memory_indices: &[usize],
    loss_cfg: &LossConfig,
    use_purity: bool,
    rng: &mut SeededRng,
) -> Result<(LossBreakdown, Tensor)> {
    let (backbone, enc_caches) = model.encode(arena, x, Mode::Train, rng)?;
    let (f, proj_caches) = model.project(arena, &backbone, Mode::Train, rng)?;

    let (p, class_caches) = model.predict_class(arena, &f, rng)?;
    let ce = class_ce(&p, class_labels)?;
    let mut grad_f = model.class_head.backward(arena, &class_caches, &ce.grad)?;

    let breakdown = match banks {
        None => total_loss(ce.loss, 0.0, 0.0, loss_cfg.lambda, 0, 0)?,
        Some(banks) => {
            if memory_indices.len() != class_labels.len() {
                return Err(ScanError::shape(format!(
                    "{} memory indices for a batch of {}",
                    memory_indices.len(),
                    class_labels.len()
                )));
            }
            let pseudo: Vec<usize> =
                memory_indices.iter().map(|&i| banks.cluster_label(i)).collect();
            let (pp, cluster_caches) = model.predict_cluster(arena, &f, rng)?;
            let cce = cluster_ce(&pp, &pseudo)?;
            let g = model.cluster_head.backward(arena, &cluster_caches, &cce.grad)?;
            grad_f = grad_f.add(&g)?;

            if use_purity {
                let mut pairs = mine_batch(banks, memory_indices);
                let (anchors, norms) = normalize_rows_lenient(&f);
                for (pair, &n) in pairs.iter_mut().zip(&norms) {
                    if n == 0.0 {
                        // Zero embedding cannot anchor a triplet.
                        *pair = None;
                    }
                }
                let pl = purity_loss(&anchors, &pairs, loss_cfg.alpha, loss_cfg.purity_reduction)?;
                for i in 0..f.rows() {
                    if norms[i] == 0.0 {
                        continue;
                    }
                    let a = anchors.row(i);
                    let g = pl.grad.row(i);
                    let dot: f64 = g.iter().zip(a).map(|(gv, av)| gv * av).sum();
                    let row = grad_f.row_mut(i);
                    for (dst, (gv, av)) in row.iter_mut().zip(g.iter().zip(a)) {
                        // d(f/||f||)/df chain: (g - (g.a) a) / ||f||.
                        *dst += loss_cfg.lambda * (gv - dot * av) / norms[i];
                    }
                }
                total_loss(ce.loss, cce.loss, pl.loss, loss_cfg.lambda, pl.active, pl.skipped)?
            } else {
                total_loss(ce.loss, cce.loss, 0.0, loss_cfg.lambda, 0, 0)?
            }
        }
    };

    let grad_backbone = model.projection.backward(arena, &proj_caches, &grad_f)?;
    model.encoder.backward(arena, &enc_caches, &grad_backbone)?;
    Ok((breakdown, f))
}

/// Row-normalizes, mapping zero rows to zero (with recorded norm 0.0) instead
/// of erroring; training treats such rows as skipped purity anchors.
fn normalize_rows_lenient(f: &Tensor) -> (Tensor, Vec<f64>) {
    let mut out = f.clone();
    let mut norms = Vec::with_capacity(f.rows());
    for i in 0..f.rows() {
        let n = slice_norm(f.row(i));
        if n > 0.0 {
            for v in out.row_mut(i) {
                *v /= n;
            }
            norms.push(n);
        } else {
            norms.push(0.0);
        }
    }
    (out, norms)
}

/// Training driver owning the model parameters, memory banks, and dataset.
/// `step_epoch` advances one epoch at a time so callers can checkpoint
/// between epochs; `run` drives to completion.
#[derive(Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: ScanModel,
    pub arena: ParamArena,
    pub banks: Option<MemoryBanks>,
    epochs_done: usize,
    data: Tensor,
    labels: Vec<usize>,
    root: SeededRng,
}

impl Trainer {
    /// Fresh trainer: builds the model with parameters initialized from
    /// `cfg.seed`.
    pub fn new(
        cfg: TrainConfig,
        model_cfg: ModelConfig,
        data: Tensor,
        labels: Vec<usize>,
    ) -> Result<Trainer> {
        let mut root = SeededRng::new(cfg.seed);
        let mut arena = ParamArena::new();
        let model = ScanModel::new(model_cfg, &mut arena, &mut root)?;
        Trainer::from_state(cfg, model, arena, None, 0, data, labels)
    }

    /// Trainer resumed from externally restored state (checkpoints).
    pub fn from_state(
        cfg: TrainConfig,
        model: ScanModel,
        arena: ParamArena,
        banks: Option<MemoryBanks>,
        epochs_done: usize,
        data: Tensor,
        labels: Vec<usize>,
    ) -> Result<Trainer> {
        cfg.validate()?;
        if data.rank() < 2 || data.rows() == 0 {
            return Err(ScanError::data(
                "training requires a non-empty base split (batch x sample shape)".to_string(),
            ));
        }
        if labels.len() != data.rows() {
            return Err(ScanError::data(format!(
                "{} labels for {} samples",
                labels.len(),
                data.rows()
            )));
        }
        let n_classes = model.cfg.heads.n_classes;
        if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(ScanError::data(format!(
                "class label {y} out of range ({n_classes} classes)"
            )));
        }
        let n_clusters = model.cfg.heads.n_clusters;
        if cfg.mode != TrainMode::Baseline && n_clusters > data.rows() {
            return Err(ScanError::config(format!(
                "cluster count {n_clusters} exceeds the {} base samples",
                data.rows()
            )));
        }
        if epochs_done > cfg.epochs {
            return Err(ScanError::config(format!(
                "resume epoch {epochs_done} is past the configured {} epochs",
                cfg.epochs
            )));
        }
        if let Some(b) = &banks {
            if b.len() != data.rows() || b.dim() != model.cfg.projection.out_dim {
                return Err(ScanError::data(format!(
                    "memory banks ({} rows, dim {}) do not match the dataset ({} rows, dim {})",
                    b.len(),
                    b.dim(),
                    data.rows(),
                    model.cfg.projection.out_dim
                )));
            }
        }
        let root = SeededRng::new(cfg.seed);
        Ok(Trainer { cfg, model, arena, banks, epochs_done, data, labels, root })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done >= self.cfg.epochs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Eval-mode projected embeddings of the whole dataset, L2-normalized.
    /// A sample the trailing ReLU zeroed out entirely cannot be placed on the
    /// unit sphere; it gets the deterministic uniform direction `1/sqrt(d)`
    /// instead (training then moves it). Non-finite embeddings abort.
    pub fn embed_all_normalized(&mut self) -> Result<Tensor> {
        let n = self.data.rows();
        let d = self.model.cfg.projection.out_dim;
        let mut out = Tensor::zeros(&[n, d]);
        let idxs: Vec<usize> = (0..n).collect();
        for chunk in idxs.chunks(self.cfg.batch_size.max(1)) {
            let x = stack_rows(&self.data, chunk)?;
            let f = self.model.embed_projected(&mut self.arena, &x)?;
            for (bi, &i) in chunk.iter().enumerate() {
                out.row_mut(i).copy_from_slice(f.row(bi));
            }
        }
        let fallback = 1.0 / (d as f64).sqrt();
        for i in 0..n {
            let norm = slice_norm(out.row(i));
            if !norm.is_finite() {
                return Err(ScanError::numeric(format!(
                    "sample {i} has a non-finite embedding; cannot normalize for clustering"
                )));
            }
            let row = out.row_mut(i);
            if norm > 0.0 {
                for v in row {
                    *v /= norm;
                }
            } else {
                row.fill(fallback);
            }
        }
        Ok(out)
    }

    /// K-Means over current normalized embeddings + memory bank construction.
    fn initialize_banks(&mut self) -> Result<()> {
        let embeddings = self.embed_all_normalized()?;
        let k = self.model.cfg.heads.n_clusters;
        let mut rng = self.root.substream("kmeans");
        let clustering = kmeans_fit(&embeddings, &KMeansConfig::new(k), &mut rng)?;
        let banks = MemoryBanks::init_memory(
            &embeddings,
            &self.labels,
            &clustering,
            self.model.cfg.heads.n_classes,
            k,
        )?;
        self.banks = Some(banks);
        Ok(())
    }

    /// Runs the next epoch and returns its log record. Initializes the memory
    /// banks first when the warm-up just ended.
    pub fn step_epoch(&mut self) -> Result<EpochRecord> {
        if self.is_finished() {
            return Err(ScanError::config(format!(
                "training already finished ({} epochs)",
                self.cfg.epochs
            )));
        }
        let epoch = self.epochs_done; // 0-based index of the epoch we run now
        let joint = self.cfg.mode != TrainMode::Baseline && epoch >= self.cfg.warmup_epochs;
        if joint && self.banks.is_none() {
            self.initialize_banks()?;
        }

        let mut order: Vec<usize> = (0..self.data.rows()).collect();
        self.root.substream_indexed("shuffle", epoch as u64).shuffle(&mut order);
        let mut dropout_rng = self.root.substream_indexed("dropout", epoch as u64);
        let mut augment_rng = self.root.substream_indexed("augment", epoch as u64);

        let use_purity = self.cfg.mode == TrainMode::Full;
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut active = 0;
        let mut skipped = 0;
        let mut batches = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let x = self.gather_augmented(chunk, &mut augment_rng)?;
            let y: Vec<usize> = chunk.iter().map(|&i| self.labels[i]).collect();
            let (breakdown, f) = training_step_loss(
                &self.model,
                &mut self.arena,
                if joint { self.banks.as_ref() } else { None },
                &x,
                &y,
                chunk,
                &self.cfg.loss,
                use_purity,
                &mut dropout_rng,
            )?;
            sgd_step(&mut self.arena, &self.cfg.sgd)?;
            if joint {
                let banks = self.banks.as_mut().expect("banks initialized for joint epochs");
                for (bi, &i) in chunk.iter().enumerate() {
                    let row = f.row(bi);
                    if slice_norm(row) > 0.0 {
                        banks.momentum_update(i, row, self.cfg.memory.beta)?;
                        if self.cfg.reassign == ReassignCadence::Batch {
                            banks.reassign_cluster_label(i)?;
                        }
                    }
                }
            }
            sums.0 += breakdown.class_loss;
            sums.1 += breakdown.cluster_loss;
            sums.2 += breakdown.purity_loss;
            sums.3 += breakdown.total;
            active += breakdown.active_triplets;
            skipped += breakdown.skipped_triplets;
            batches += 1;
        }

        let (error_rate, nonempty) = match self.banks.as_mut() {
            Some(banks) if joint => {
                banks.reassign_all()?;
                banks.refresh_centroids();
                let err = cluster_error_rate(banks.cluster_labels(), banks.class_labels())?;
                (Some(err), Some(banks.nonempty_cluster_count()))
            }
            _ => (None, None),
        };

        self.epochs_done += 1;
        let b = batches as f64;
        Ok(EpochRecord {
            epoch: self.epochs_done,
            class_loss: sums.0 / b,
            cluster_loss: sums.1 / b,
            purity_loss: sums.2 / b,
            total: sums.3 / b,
            cluster_error_rate: error_rate,
            active_triplets: active,
            skipped_triplets: skipped,
            nonempty_clusters: nonempty,
        })
    }

    /// Runs all remaining epochs, returning their records in order.
    pub fn run(&mut self) -> Result<Vec<EpochRecord>> {
        let mut records = Vec::new();
        while !self.is_finished() {
            records.push(self.step_epoch()?);
        }
        Ok(records)
    }

    fn gather_augmented(&self, idxs: &[usize], rng: &mut SeededRng) -> Result<Tensor> {
        let shape: Vec<usize> = self.data.shape()[1..].to_vec();
        let len: usize = shape.iter().product();
        let mut out = vec![0.0; idxs.len() * len];
        for (bi, &i) in idxs.iter().enumerate() {
            let sample =
                Tensor::from_vec(shape.clone(), self.data.data()[i * len..(i + 1) * len].to_vec())?;
            let aug = augment(&sample, &self.cfg.augment, rng);
            out[bi * len..(bi + 1) * len].copy_from_slice(aug.data());
        }
        let mut s = vec![idxs.len()];
        s.extend_from_slice(&shape);
        Tensor::from_vec(s, out)
    }
}

/// Stacks dataset rows `idxs` into a `len(idxs) x sample_shape` batch.
pub fn stack_rows(data: &Tensor, idxs: &[usize]) -> Result<Tensor> {
    let shape: Vec<usize> = data.shape()[1..].to_vec();
    let len: usize = shape.iter().product();
    let mut out = vec![0.0; idxs.len() * len];
    for (bi, &i) in idxs.iter().enumerate() {
        out[bi * len..(bi + 1) * len].copy_from_slice(&data.data()[i * len..(i + 1) * len]);
    }
    let mut s = vec![idxs.len()];
    s.extend_from_slice(&shape);
    Tensor::from_vec(s, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::Clustering;
    use crate::data::synth::{generate_dataset, DataKind, SynthConfig};
    use crate::data::manifest::Split;
    use crate::gradcheck::grad_check;
    use crate::model::{EncoderConfig, HeadConfig, ProjectionConfig};

    fn tiny_synth(seed: u64) -> (Tensor, Vec<usize>, usize) {
        let cfg = SynthConfig {
            n_base_classes: 2,
            n_novel_classes: 0,
            subclusters_per_class: vec![1, 2],
            samples_per_class: 20,
            kind: DataKind::Vector { dim: 8 },
            seed,
            ..SynthConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        let (matrix, names, _) = ds.split_matrix(Split::Base);
        let mut uniq: Vec<String> = names.clone();
        uniq.sort();
        uniq.dedup();
        let labels: Vec<usize> =
            names.iter().map(|n| uniq.binary_search(n).unwrap()).collect();
        (matrix, labels, uniq.len())
    }

    fn tiny_model_cfg(n_classes: usize, n_clusters: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig::Mlp { input_dim: 8, hidden: vec![16], backbone_dim: 12 },
            projection: ProjectionConfig { out_dim: 6, dropout_rate: 0.2 },
            heads: HeadConfig { n_classes, n_clusters },
        }
    }

    fn tiny_train_cfg(mode: TrainMode, epochs: usize, warmup: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            warmup_epochs: warmup,
            batch_size: 8,
            mode,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn baseline_mode_never_touches_cluster_machinery() {
        let (data, labels, n_classes) = tiny_synth(5);
        let mut t = Trainer::new(
            tiny_train_cfg(TrainMode::Baseline, 4, 2, 9),
            tiny_model_cfg(n_classes, 5),
            data,
            labels,
        )
        .unwrap();
        let records = t.run().unwrap();
        assert_eq!(records.len(), 4);
        for r in &records {
            assert_eq!(r.cluster_loss, 0.0);
            assert_eq!(r.purity_loss, 0.0);
            assert_eq!(r.cluster_error_rate, None);
            assert_eq!(r.nonempty_clusters, None);
            assert_eq!(r.active_triplets + r.skipped_triplets, 0);
            assert!((r.total - r.class_loss).abs() < 1e-12);
        }
        assert!(t.banks.is_none());
        assert!(
            records.last().unwrap().class_loss < records[0].class_loss,
            "class loss should fall: {} -> {}",
            records[0].class_loss,
            records.last().unwrap().class_loss
        );
    }

    #[test]
    fn warmup_schedule_defers_cluster_and_purity_losses() {
        let (data, labels, n_classes) = tiny_synth(6);
        let mut t = Trainer::new(
            tiny_train_cfg(TrainMode::Full, 4, 2, 10),
            tiny_model_cfg(n_classes, 5),
            data,
            labels,
        )
        .unwrap();
        let records = t.run().unwrap();
        for r in &records[..2] {
            assert_eq!(r.cluster_loss, 0.0, "warm-up epoch {} ran the cluster branch", r.epoch);
            assert_eq!(r.cluster_error_rate, None);
        }
        for r in &records[2..] {
            assert!(r.cluster_loss > 0.0, "joint epoch {} skipped the cluster branch", r.epoch);
            assert!(r.cluster_error_rate.is_some());
            let nonempty = r.nonempty_clusters.unwrap();
            assert!(nonempty >= 1 && nonempty <= 5);
        }
        assert!(t.banks.is_some());
    }

    #[test]
    fn no_purity_mode_trains_cluster_branch_without_mining() {
        let (data, labels, n_classes) = tiny_synth(7);
        let mut t = Trainer::new(
            tiny_train_cfg(TrainMode::NoPurity, 3, 1, 11),
            tiny_model_cfg(n_classes, 5),
            data,
            labels,
        )
        .unwrap();
        let records = t.run().unwrap();
        for r in &records {
            assert_eq!(r.purity_loss, 0.0);
            assert_eq!(r.active_triplets + r.skipped_triplets, 0);
        }
        assert!(records[1].cluster_loss > 0.0);
    }

    #[test]
    fn every_logged_epoch_satisfies_additivity() {
        let (data, labels, n_classes) = tiny_synth(8);
        let cfg = tiny_train_cfg(TrainMode::Full, 4, 1, 12);
        let lambda = cfg.loss.lambda;
        let mut t = Trainer::new(cfg, tiny_model_cfg(n_classes, 5), data, labels).unwrap();
        for r in t.run().unwrap() {
            let expect = r.class_loss + r.cluster_loss + lambda * r.purity_loss;
            assert!(
                (r.total - expect).abs() <= 1e-12,
                "epoch {}: total {} vs components {}",
                r.epoch,
                r.total,
                expect
            );
        }
    }

    #[test]
    fn same_seed_gives_bitwise_identical_traces() {
        let (data, labels, n_classes) = tiny_synth(9);
        let run = || {
            let mut t = Trainer::new(
                tiny_train_cfg(TrainMode::Full, 4, 1, 13),
                tiny_model_cfg(n_classes, 5),
                data.clone(),
                labels.clone(),
            )
            .unwrap();
            t.run().unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run_exactly() {
        let (data, labels, n_classes) = tiny_synth(10);
        let cfg = tiny_train_cfg(TrainMode::Full, 6, 2, 14);
        let model_cfg = tiny_model_cfg(n_classes, 5);

        let mut full = Trainer::new(cfg.clone(), model_cfg.clone(), data.clone(), labels.clone()).unwrap();
        let full_records = full.run().unwrap();

        let mut first = Trainer::new(cfg.clone(), model_cfg, data.clone(), labels.clone()).unwrap();
        let mut records = Vec::new();
        for _ in 0..3 {
            records.push(first.step_epoch().unwrap());
        }
        // Snapshot state as a checkpoint would and rebuild the trainer.
        let mut resumed = Trainer::from_state(
            cfg,
            first.model.clone(),
            first.arena.clone(),
            first.banks.clone(),
            first.epochs_done(),
            data,
            labels,
        )
        .unwrap();
        records.extend(resumed.run().unwrap());

        assert_eq!(records, full_records);
        for (a, b) in full.arena.iter().zip(resumed.arena.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.data(), b.value.data(), "parameter {} diverged", a.name);
        }
    }

    #[test]
    fn degenerate_datasets_and_oversized_cluster_counts_are_rejected() {
        let (data, labels, n_classes) = tiny_synth(11);
        // A rank-1 tensor is not a batch of samples.
        let err = Trainer::new(
            tiny_train_cfg(TrainMode::Full, 2, 1, 0),
            tiny_model_cfg(n_classes, 5),
            Tensor::from_vec(vec![8], vec![0.0; 8]).unwrap(),
            vec![],
        )
        .unwrap_err();
        assert!(err.to_string().contains("non-empty"), "got: {err}");

        // Label list shorter than the sample count.
        let err = Trainer::new(
            tiny_train_cfg(TrainMode::Full, 2, 1, 0),
            tiny_model_cfg(n_classes, 5),
            data.clone(),
            labels[..labels.len() - 1].to_vec(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("labels"), "got: {err}");

        // 41 clusters for 40 samples.
        let err = Trainer::new(
            tiny_train_cfg(TrainMode::Full, 2, 1, 0),
            tiny_model_cfg(n_classes, 41),
            data,
            labels,
        )
        .unwrap_err();
        assert!(err.to_string().contains("41"), "got: {err}");
    }

    /// Finite-difference oracle for the full objective: class CE + cluster CE
    /// + lambda * purity, through both heads, projection (batchnorm + live
    /// dropout), and the encoder.
    #[test]
    fn full_objective_passes_gradient_check_on_toy_batch() {
        let mut root = SeededRng::new(42);
        let mut arena = ParamArena::new();
        let model = ScanModel::new(
            ModelConfig {
                encoder: EncoderConfig::Mlp { input_dim: 4, hidden: vec![6], backbone_dim: 6 },
                projection: ProjectionConfig { out_dim: 5, dropout_rate: 0.3 },
                heads: HeadConfig { n_classes: 2, n_clusters: 3 },
            },
            &mut arena,
            &mut root,
        )
        .unwrap();

        // Zero-initialized biases park ReLUs exactly on their kinks, where
        // central differences are invalid; jitter every parameter off the
        // razor edge.
        let mut jitter = root.substream("jitter");
        for p in arena.iter_mut() {
            if p.trainable {
                for v in p.value.data_mut() {
                    *v += jitter.uniform_range(-0.05, 0.05);
                }
            }
        }

        let x = {
            let mut gen = root.substream("x");
            Tensor::from_vec(vec![4, 4], (0..16).map(|_| gen.normal()).collect()).unwrap()
        };
        let labels = vec![0, 1, 0, 1];
        let mem_indices = vec![0, 1, 2, 3];

        // Banks with a deliberately impure clustering so every anchor mines a
        // triplet; alpha = 5 keeps each hinge strictly active (unit-ball
        // vectors bound the distance terms by 4) and away from its kink.
        let banks = {
            let mut gen = root.substream("banks");
            let mut rows = Vec::new();
            for _ in 0..4 {
                let row: Vec<f64> = (0..5).map(|_| gen.normal()).collect();
                let norm = slice_norm(&row);
                rows.push(row.into_iter().map(|v| v / norm).collect::<Vec<f64>>());
            }
            let embeddings = Tensor::from_rows(&rows).unwrap();
            let assignments = vec![0, 0, 1, 1];
            let (centroids, _) =
                crate::cluster::recompute_centroids(&embeddings, &assignments, 3, None).unwrap();
            let clustering = Clustering {
                centroids,
                assignments,
                inertia: 0.0,
                inertia_trace: vec![],
            };
            MemoryBanks::init_memory(&embeddings, &labels, &clustering, 2, 3).unwrap()
        };
        let loss_cfg = LossConfig { alpha: 5.0, ..LossConfig::default() };

        // Sanity: the setup must actually exercise the purity branch.
        {
            let mut rng = root.substream("dropout").clone();
            let (breakdown, _) = training_step_loss(
                &model,
                &mut arena,
                Some(&banks),
                &x,
                &labels,
                &mem_indices,
                &loss_cfg,
                true,
                &mut rng,
            )
            .unwrap();
            assert!(breakdown.active_triplets >= 1, "no active triplets: {breakdown:?}");
            arena.zero_grads();
        }

        let dropout_src = root.substream("dropout");
        let report = grad_check(
            |arena: &mut ParamArena| {
                let mut rng = dropout_src.clone(); // freeze masks across calls
                let (breakdown, _) = training_step_loss(
                    &model,
                    arena,
                    Some(&banks),
                    &x,
                    &labels,
                    &mem_indices,
                    &loss_cfg,
                    true,
                    &mut rng,
                )?;
                Ok(breakdown.total)
            },
            &mut arena,
            1e-5,
        )
        .unwrap();
        assert!(report.checked > 100, "only {} elements checked", report.checked);
        assert!(
            report.max_rel_err < 1e-5,
            "max rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }
}

//! Synthetic datasets with ground-truth sub-cluster structure.
//!
//! Vector data lives in an even-dimensional space: coarse class centers
//! occupy the first half, sub-cluster offsets the second. A base class is a
//! mixture of sub-cluster blobs at `center_c + offset_m`; the offsets are
//! shared across classes, so the same fine variation recurs in every class.
//! Novel classes are *fresh samples at existing base sub-cluster positions*:
//! fine concepts inside familiar coarse regions, enumerated from the base
//! classes with the most sub-clusters so that evaluation episodes often ask
//! for distinctions *within* one coarse region. A class-trained encoder only
//! has to separate coarse regions and tends to collapse within-class
//! sub-structure; an encoder that also preserves sub-clusters keeps exactly
//! the distinctions novel episodes need.
//!
//! The noise std is large enough that neighbouring cross-class blobs overlap
//! at the margins, so early clusters mix classes and the purity loss has
//! real work to do.
//!
//! Image data renders each (class, sub-cluster) blob as a bright block in a
//! distinct grid cell plus pixel noise; it exercises the convolutional path
//! and augmentation, not the geometric acceptance properties.

use std::path::Path;

use crate::data::manifest::{write_manifest, ManifestRecord, Split};
use crate::data::tensor_file::write_tensor_file;
use crate::error::{Result, ScanError};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum DataKind {
    Vector { dim: usize },
    Image { height: usize, width: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_base_classes: usize,
    pub n_novel_classes: usize,
    /// Sub-cluster count per class, cycled when shorter than the class list.
    pub subclusters_per_class: Vec<usize>,
    pub samples_per_class: usize,
    pub kind: DataKind,
    /// Minimum distance between class centers.
    pub inter_class_separation: f64,
    /// Gaussian noise std around each sub-cluster center.
    pub intra_subcluster_std: f64,
    /// Minimum distance between sub-cluster offsets within a class.
    pub subcluster_spread: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_base_classes: 4,
            n_novel_classes: 4,
            subclusters_per_class: vec![1, 2, 3, 2],
            samples_per_class: 200,
            kind: DataKind::Vector { dim: 8 },
            inter_class_separation: 4.0,
            intra_subcluster_std: 0.75,
            subcluster_spread: 8.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_base_classes == 0 {
            return Err(ScanError::config("need at least one base class".to_string()));
        }
        if self.samples_per_class == 0 {
            return Err(ScanError::config("samples_per_class must be positive".to_string()));
        }
        if self.subclusters_per_class.is_empty() || self.subclusters_per_class.iter().any(|&m| m == 0) {
            return Err(ScanError::config("subclusters_per_class entries must be positive".to_string()));
        }
        let total_base_blobs: usize = (0..self.n_base_classes).map(|c| self.subclusters_for(c)).sum();
        if self.n_novel_classes > total_base_blobs {
            return Err(ScanError::config(format!(
                "n_novel_classes {} exceeds the {} base sub-cluster blobs available: each novel \
                 class reuses one base sub-cluster position",
                self.n_novel_classes, total_base_blobs
            )));
        }
        if !(self.inter_class_separation > 2.0 * self.intra_subcluster_std) {
            return Err(ScanError::config(format!(
                "inter_class_separation {} must exceed 2 * intra_subcluster_std {}",
                self.inter_class_separation, self.intra_subcluster_std
            )));
        }
        if !(self.subcluster_spread > 2.0 * self.intra_subcluster_std) {
            return Err(ScanError::config(format!(
                "subcluster_spread {} must exceed 2 * intra_subcluster_std {}",
                self.subcluster_spread, self.intra_subcluster_std
            )));
        }
        match self.kind {
            DataKind::Vector { dim } => {
                if dim < 4 || dim % 2 != 0 {
                    return Err(ScanError::config(format!(
                        "vector dim {dim} must be even and >= 4 (two subspace halves)"
                    )));
                }
            }
            DataKind::Image { height, width } => {
                if height < 16 || width < 16 {
                    return Err(ScanError::config(format!(
                        "image size {height}x{width} must be at least 16x16"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Sub-cluster count for base class index `c`. Novel classes always have
    /// a single blob, so the cycle applies to the base split only.
    pub fn subclusters_for(&self, c: usize) -> usize {
        self.subclusters_per_class[c % self.subclusters_per_class.len()]
    }

    /// Placement plan for novel classes: the j-th novel class draws fresh
    /// samples at the j-th base sub-cluster position, enumerating base
    /// classes with the most sub-clusters first (ties broken by class
    /// index). Concentrating novel classes inside few coarse regions makes
    /// episodes that hinge on within-region distinctions common.
    pub fn novel_blob_plan(&self) -> Vec<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.n_base_classes).collect();
        order.sort_by_key(|&c| (std::cmp::Reverse(self.subclusters_for(c)), c));
        let mut plan = Vec::new();
        for &c in &order {
            for sub in 0..self.subclusters_for(c) {
                plan.push((c, sub));
            }
        }
        plan.truncate(self.n_novel_classes);
        plan
    }

    pub fn sample_shape(&self) -> Vec<usize> {
        match self.kind {
            DataKind::Vector { dim } => vec![dim],
            DataKind::Image { height, width } => vec![1, height, width],
        }
    }
}

/// Fully materialized dataset with ground truth, for in-process use.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub cfg: SynthConfig,
    /// One tensor per sample, in manifest order.
    pub samples: Vec<Tensor>,
    pub class_names: Vec<String>,
    pub splits: Vec<Split>,
    /// Sub-cluster id within the sample's class.
    pub subcluster_ids: Vec<u32>,
    /// Global (class, sub-cluster) blob id across both splits.
    pub blob_ids: Vec<usize>,
    /// Noise-free center of each blob, indexed by blob id.
    pub blob_centers: Vec<Tensor>,
    /// Class name of each blob, indexed by blob id.
    pub blob_classes: Vec<String>,
    /// Split of each blob, indexed by blob id. Novel blobs sit at base blob
    /// positions by construction, so nearest-center comparisons are only
    /// meaningful within one split.
    pub blob_splits: Vec<Split>,
}

impl SynthDataset {
    /// Samples of one split stacked into a matrix (vector kind only),
    /// with class names and blob ids in the same order.
    pub fn split_matrix(&self, split: Split) -> (Tensor, Vec<String>, Vec<usize>) {
        let rows: Vec<Vec<f64>> = self
            .samples
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == split)
            .map(|(t, _)| t.data().to_vec())
            .collect();
        let names: Vec<String> = self
            .class_names
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == split)
            .map(|(n, _)| n.clone())
            .collect();
        let blobs: Vec<usize> = self
            .blob_ids
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == split)
            .map(|(b, _)| *b)
            .collect();
        (Tensor::from_rows(&rows).expect("non-empty split"), names, blobs)
    }
}

/// Places `count` points in `dim` dimensions with pairwise distance at least
/// `min_dist`. Uses exact orthogonal-axis placement when it fits, otherwise
/// seeded rejection sampling in a bounded cube.
fn place_points(dim: usize, count: usize, min_dist: f64, rng: &mut SeededRng) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Ok(vec![]);
    }
    if count == 1 {
        return Ok(vec![vec![0.0; dim]]);
    }
    if count <= dim {
        // Axis placement: pairwise distance exactly min_dist.
        let s = min_dist / std::f64::consts::SQRT_2;
        return Ok((0..count)
            .map(|i| {
                let mut p = vec![0.0; dim];
                p[i] = s;
                p
            })
            .collect());
    }
    let side = min_dist * (count as f64).powf(1.0 / dim as f64).min(8.0);
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(count);
    while points.len() < count {
        let mut placed = false;
        for _ in 0..5000 {
            let candidate: Vec<f64> = (0..dim).map(|_| rng.uniform_range(-side, side)).collect();
            let ok = points.iter().all(|p| {
                let d2: f64 = p.iter().zip(&candidate).map(|(a, b)| (a - b) * (a - b)).sum();
                d2 >= min_dist * min_dist
            });
            if ok {
                points.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(ScanError::data(format!(
                "infeasible geometry: cannot place {count} points at mutual distance {min_dist} \
                 in {dim} dimensions (placed {})",
                points.len()
            )));
        }
    }
    Ok(points)
}

/// Embeds subspace coordinates into the full vector: `offset` selects which
/// half of the space the coordinates occupy.
fn embed(full_dim: usize, coords: &[f64], offset: usize) -> Vec<f64> {
    let mut v = vec![0.0; full_dim];
    v[offset..offset + coords.len()].copy_from_slice(coords);
    v
}

fn render_image(height: usize, width: usize, blob_id: usize) -> Tensor {
    // One bright 3x3 block per blob, placed in a distinct 4x4 grid cell.
    let cells_y = height / 4;
    let cells_x = width / 4;
    let cell = blob_id % (cells_y * cells_x);
    let cy = (cell / cells_x) * 4;
    let cx = (cell % cells_x) * 4;
    let mut img = Tensor::zeros(&[1, height, width]);
    for dy in 0..3 {
        for dx in 0..3 {
            img.data_mut()[(cy + dy) * width + (cx + dx)] = 3.0;
        }
    }
    img
}

/// Builds the dataset in memory. Deterministic in `cfg.seed`.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let root = SeededRng::new(cfg.seed);

    let mut samples = Vec::new();
    let mut class_names = Vec::new();
    let mut splits = Vec::new();
    let mut subcluster_ids = Vec::new();
    let mut blob_ids = Vec::new();
    let mut blob_centers: Vec<Tensor> = Vec::new();
    let mut blob_classes: Vec<String> = Vec::new();
    let mut blob_splits: Vec<Split> = Vec::new();

    let shape = cfg.sample_shape();
    let sample_len: usize = shape.iter().product();

    // Vector geometry, shared by both splits: coarse class centers in the
    // first half of the space, sub-cluster offsets on axes of the second
    // half so every offset pair is exactly `spread` apart.
    let (centers, offsets) = match cfg.kind {
        DataKind::Vector { dim } => {
            let half = dim / 2;
            let max_subs = (0..cfg.n_base_classes).map(|c| cfg.subclusters_for(c)).max().unwrap();
            let mut center_rng = root.substream("class_centers");
            let raw_centers =
                place_points(half, cfg.n_base_classes, cfg.inter_class_separation, &mut center_rng)?;
            let mut offset_rng = root.substream("subcluster_offsets");
            let raw_offsets = if max_subs == 1 {
                vec![vec![0.0; half]]
            } else {
                place_points_on_axes(half, max_subs, cfg.subcluster_spread, &mut offset_rng)?
            };
            (
                raw_centers.iter().map(|c| embed(dim, c, 0)).collect::<Vec<_>>(),
                raw_offsets.iter().map(|o| embed(dim, o, half)).collect::<Vec<_>>(),
            )
        }
        DataKind::Image { .. } => (vec![], vec![]),
    };
    let vector_blob_center = |c: usize, sub: usize| -> Result<Tensor> {
        let v: Vec<f64> = centers[c].iter().zip(&offsets[sub]).map(|(a, b)| a + b).collect();
        Tensor::from_vec(shape.clone(), v)
    };

    // Every class contributes one manifest row per sample; `class_blobs`
    // lists the blob ids the class cycles through.
    struct ClassPlan {
        name: String,
        split: Split,
        noise_tag: String,
        class_blobs: Vec<usize>,
    }
    let mut plans: Vec<ClassPlan> = Vec::new();

    // Base split: class c is a mixture of `subclusters_for(c)` blobs at
    // center_c + offset_m.
    for c in 0..cfg.n_base_classes {
        let name = format!("base{c:03}");
        let mut class_blobs = Vec::new();
        for sub in 0..cfg.subclusters_for(c) {
            let center = match cfg.kind {
                DataKind::Vector { .. } => vector_blob_center(c, sub)?,
                DataKind::Image { height, width } => render_image(height, width, blob_centers.len()),
            };
            class_blobs.push(blob_centers.len());
            blob_centers.push(center);
            blob_classes.push(name.clone());
            blob_splits.push(Split::Base);
        }
        plans.push(ClassPlan { name, split: Split::Base, noise_tag: format!("base_noise_{c}"), class_blobs });
    }

    // Novel split: each novel class is a single blob of fresh samples at an
    // existing base sub-cluster position.
    for (j, &(parent, sub)) in cfg.novel_blob_plan().iter().enumerate() {
        let name = format!("novel{j:03}");
        let center = match cfg.kind {
            DataKind::Vector { .. } => vector_blob_center(parent, sub)?,
            DataKind::Image { height, width } => render_image(height, width, blob_centers.len()),
        };
        let class_blobs = vec![blob_centers.len()];
        blob_centers.push(center);
        blob_classes.push(name.clone());
        blob_splits.push(Split::Novel);
        plans.push(ClassPlan { name, split: Split::Novel, noise_tag: format!("novel_noise_{j}"), class_blobs });
    }

    for plan in &plans {
        for i in 0..cfg.samples_per_class {
            let sub = i % plan.class_blobs.len();
            let blob = plan.class_blobs[sub];
            let mut noise_rng = root.substream_indexed(&plan.noise_tag, i as u64);
            let mut data = blob_centers[blob].data().to_vec();
            for v in data.iter_mut().take(sample_len) {
                *v += cfg.intra_subcluster_std * noise_rng.normal();
            }
            samples.push(Tensor::from_vec(shape.clone(), data)?);
            class_names.push(plan.name.clone());
            splits.push(plan.split);
            subcluster_ids.push(sub as u32);
            blob_ids.push(blob);
        }
    }

    Ok(SynthDataset {
        cfg: cfg.clone(),
        samples,
        class_names,
        splits,
        subcluster_ids,
        blob_ids,
        blob_centers,
        blob_classes,
        blob_splits,
    })
}

/// Axis placement without the orthogonal-fit restriction of `place_points`:
/// errors when more offsets are requested than the subspace has axes.
fn place_points_on_axes(dim: usize, count: usize, min_dist: f64, rng: &mut SeededRng) -> Result<Vec<Vec<f64>>> {
    if count <= dim {
        let s = min_dist / std::f64::consts::SQRT_2;
        return Ok((0..count)
            .map(|i| {
                let mut p = vec![0.0; dim];
                p[i] = s;
                p
            })
            .collect());
    }
    place_points(dim, count, min_dist, rng)
}

/// Per-class summary returned (and printed) after generation.
#[derive(Debug, Clone)]
pub struct SynthSummary {
    /// (class name, split, sub-cluster count, sample count).
    pub classes: Vec<(String, Split, usize, usize)>,
    pub files_written: usize,
}

/// Generates the dataset and writes tensor files plus `manifest.csv` under
/// `out_dir`. Paths in the manifest are relative to the manifest.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthSummary> {
    let ds = generate_dataset(cfg)?;
    let data_dir = out_dir.join("data");
    std::fs::create_dir_all(&data_dir).map_err(|e| ScanError::io(&data_dir, e))?;

    let mut records = Vec::with_capacity(ds.samples.len());
    let mut per_class_index = std::collections::HashMap::<String, usize>::new();
    for (i, sample) in ds.samples.iter().enumerate() {
        let name = &ds.class_names[i];
        let idx = per_class_index.entry(name.clone()).or_insert(0);
        let rel = format!("data/{name}_{idx:04}.sct");
        *idx += 1;
        write_tensor_file(&out_dir.join(&rel), sample)?;
        records.push(ManifestRecord {
            path: rel,
            class_label: name.clone(),
            split: ds.splits[i],
            subcluster_id: Some(ds.subcluster_ids[i]),
        });
    }
    write_manifest(&out_dir.join("manifest.csv"), &records)?;

    let mut classes = Vec::new();
    for c in 0..cfg.n_base_classes {
        classes.push((format!("base{c:03}"), Split::Base, cfg.subclusters_for(c), cfg.samples_per_class));
    }
    for j in 0..cfg.n_novel_classes {
        classes.push((format!("novel{j:03}"), Split::Novel, 1, cfg.samples_per_class));
    }
    Ok(SynthSummary { classes, files_written: records.len() + 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{adjusted_rand_index, kmeans_fit, KMeansConfig};
    use crate::tensor::sq_dist;

    #[test]
    fn degenerate_single_blob_with_tiny_std_sits_at_center() {
        let cfg = SynthConfig {
            n_base_classes: 1,
            n_novel_classes: 0,
            subclusters_per_class: vec![1],
            samples_per_class: 5,
            intra_subcluster_std: 1e-12,
            inter_class_separation: 1.0,
            subcluster_spread: 1.0,
            ..SynthConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.samples.len(), 5);
        for s in &ds.samples {
            for (v, c) in s.data().iter().zip(ds.blob_centers[0].data()) {
                assert!((v - c).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn manifest_bookkeeping_matches_subcluster_plan() {
        let cfg = SynthConfig { samples_per_class: 12, ..SynthConfig::default() };
        let ds = generate_dataset(&cfg).unwrap();
        // Base classes get sub-cluster counts {1,2,3,2} in order.
        for (c, want) in [(0usize, 1u32), (1, 2), (2, 3), (3, 2)] {
            let name = format!("base{c:03}");
            let mut seen: Vec<u32> = ds
                .class_names
                .iter()
                .zip(&ds.subcluster_ids)
                .filter(|(n, _)| **n == name)
                .map(|(_, &s)| s)
                .collect();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len() as u32, want, "class {name}");
            assert_eq!(seen, (0..want).collect::<Vec<_>>());
        }
    }

    #[test]
    fn nearest_center_oracle_is_perfect_at_wide_separation() {
        let cfg = SynthConfig {
            inter_class_separation: 5.0,
            subcluster_spread: 5.0,
            intra_subcluster_std: 0.5, // separation = 10 * std
            samples_per_class: 40,
            ..SynthConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        for (i, s) in ds.samples.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            // Restrict to the sample's own split: base and novel blobs live
            // in the same ambient space on purpose.
            for (b, center) in ds.blob_centers.iter().enumerate() {
                if ds.blob_splits[b] != ds.splits[i] {
                    continue;
                }
                let d = sq_dist(s.data(), center.data());
                if d < best_d {
                    best_d = d;
                    best = b;
                }
            }
            assert_eq!(
                ds.blob_classes[best], ds.class_names[i],
                "sample {i} misclassified by the nearest-center oracle"
            );
        }
    }

    #[test]
    fn novel_classes_sit_on_base_subcluster_positions() {
        let ds = generate_dataset(&SynthConfig { samples_per_class: 4, ..SynthConfig::default() }).unwrap();
        // With sub-cluster counts {1,2,3,2}, the plan starts at class 2 (the
        // richest region) and walks its blobs in order, then moves to class 1.
        let plan = ds.cfg.novel_blob_plan();
        assert_eq!(plan, vec![(2, 0), (2, 1), (2, 2), (1, 0)]);
        for (j, &(parent, sub)) in plan.iter().enumerate() {
            let novel_blob = ds
                .blob_classes
                .iter()
                .position(|n| *n == format!("novel{j:03}"))
                .expect("novel blob recorded");
            let base_blob = ds
                .blob_classes
                .iter()
                .zip(&ds.blob_splits)
                .position(|(n, s)| *n == format!("base{parent:03}") && *s == Split::Base)
                .expect("base blob recorded")
                + sub;
            assert_eq!(
                ds.blob_centers[novel_blob], ds.blob_centers[base_blob],
                "novel{j:03} reuses base{parent:03} sub-cluster {sub}"
            );
        }
        // Novel classes are single blobs.
        for (id, split) in ds.subcluster_ids.iter().zip(&ds.splits) {
            if *split == Split::Novel {
                assert_eq!(*id, 0);
            }
        }
    }

    #[test]
    fn oversubscribed_novel_plan_is_rejected() {
        let cfg = SynthConfig { n_novel_classes: 9, ..SynthConfig::default() };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("8 base sub-cluster blobs"), "got: {err}");
    }

    #[test]
    fn generation_is_bitwise_reproducible() {
        let cfg = SynthConfig { samples_per_class: 10, ..SynthConfig::default() };
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.class_names, b.class_names);
        assert_eq!(a.subcluster_ids, b.subcluster_ids);
    }

    #[test]
    fn kmeans_recovers_ground_truth_subclusters() {
        // Default geometry, 5 seeds: ARI of k-means (k = true blob count)
        // against blob ids on the base split must exceed 0.9 on average.
        let mut aris = Vec::new();
        for seed in 0..5u64 {
            let cfg = SynthConfig { seed: 100 + seed, samples_per_class: 60, ..SynthConfig::default() };
            let ds = generate_dataset(&cfg).unwrap();
            let (matrix, _, blob_ids) = ds.split_matrix(Split::Base);
            let k = blob_ids.iter().collect::<std::collections::HashSet<_>>().len();
            let fit = kmeans_fit(&matrix, &KMeansConfig::new(k), &mut SeededRng::new(seed)).unwrap();
            // Densify blob ids for the ARI call.
            let ari = adjusted_rand_index(&fit.assignments, &densify(&blob_ids)).unwrap();
            aris.push(ari);
        }
        let mean = aris.iter().sum::<f64>() / aris.len() as f64;
        assert!(mean > 0.9, "mean ARI {mean} (per-seed: {aris:?})");
    }

    fn densify(ids: &[usize]) -> Vec<usize> {
        let mut sorted: Vec<usize> = ids.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        ids.iter().map(|i| sorted.binary_search(i).unwrap()).collect()
    }

    #[test]
    fn infeasible_geometry_is_reported() {
        let cfg = SynthConfig {
            n_base_classes: 2000,
            n_novel_classes: 0,
            subclusters_per_class: vec![1],
            samples_per_class: 1,
            kind: DataKind::Vector { dim: 4 },
            inter_class_separation: 1.0,
            intra_subcluster_std: 0.1,
            subcluster_spread: 1.0,
            ..SynthConfig::default()
        };
        let err = generate_dataset(&cfg).unwrap_err();
        assert!(err.to_string().contains("infeasible"), "got: {err}");
    }

    #[test]
    fn config_invariants_are_enforced() {
        let bad_sep = SynthConfig { inter_class_separation: 0.9, intra_subcluster_std: 0.5, ..SynthConfig::default() };
        assert!(bad_sep.validate().is_err());
        let bad_spread = SynthConfig { subcluster_spread: 0.5, ..SynthConfig::default() };
        assert!(bad_spread.validate().is_err());
        let odd_dim = SynthConfig { kind: DataKind::Vector { dim: 7 }, ..SynthConfig::default() };
        assert!(odd_dim.validate().is_err());
        let tiny_img = SynthConfig { kind: DataKind::Image { height: 8, width: 16 }, ..SynthConfig::default() };
        assert!(tiny_img.validate().is_err());
    }

    #[test]
    fn image_kind_renders_distinct_cells_per_blob() {
        let cfg = SynthConfig {
            kind: DataKind::Image { height: 16, width: 16 },
            samples_per_class: 4,
            intra_subcluster_std: 0.2,
            inter_class_separation: 1.0,
            subcluster_spread: 1.0,
            ..SynthConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.samples[0].shape(), &[1, 16, 16]);
        // All 12 blobs (8 base + 4 novel) land in distinct grid cells.
        let mut cells = std::collections::HashSet::new();
        for center in &ds.blob_centers {
            let bright: Vec<usize> = center
                .data()
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 1.0)
                .map(|(i, _)| i)
                .collect();
            assert_eq!(bright.len(), 9, "3x3 block");
            cells.insert(bright[0]);
        }
        assert_eq!(cells.len(), ds.blob_centers.len());
    }

    #[test]
    fn files_and_manifest_written(){
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { samples_per_class: 3, ..SynthConfig::default() };
        let summary = generate_synthetic(&cfg, dir.path()).unwrap();
        assert_eq!(summary.classes.len(), 8);
        assert_eq!(summary.files_written, 8 * 3 + 1);
        assert!(dir.path().join("manifest.csv").exists());
        assert!(dir.path().join("data/base000_0000.sct").exists());
        // Same seed, second directory: identical bytes.
        let dir2 = tempfile::tempdir().unwrap();
        generate_synthetic(&cfg, dir2.path()).unwrap();
        let a = std::fs::read(dir.path().join("data/novel002_0001.sct")).unwrap();
        let b = std::fs::read(dir2.path().join("data/novel002_0001.sct")).unwrap();
        assert_eq!(a, b);
    }
}

//! The three memory banks: per-sample feature memory with class and cluster
//! labels, class centroids, and cluster centroids.
//!
//! Rows are momentum mixtures of unit vectors and are *not* re-normalized
//! after mixing, so every row norm stays in (0, 1]. Class labels are
//! write-once: the API exposes no way to change them after initialization.

use crate::cluster::{assign_nearest, Clustering};
use crate::error::{Result, ScanError};
use crate::tensor::{normalize_rows, slice_norm, Tensor};

/// Momentum coefficient for feature-memory updates.
#[derive(Debug, Clone, Copy)]
pub struct MemoryConfig {
    pub beta: f64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig { beta: 0.5 }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(ScanError::config(format!("memory beta {} outside (0, 1]", self.beta)));
        }
        Ok(())
    }
}

/// Feature memory plus both centroid banks, always kept consistent together.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBanks {
    embeddings: Tensor,
    class_labels: Vec<usize>,
    cluster_labels: Vec<usize>,
    class_centroids: Tensor,
    cluster_centroids: Tensor,
    /// Cluster rows with no current members (centroid retained, flagged).
    cluster_stale: Vec<bool>,
    n_classes: usize,
    n_clusters: usize,
}

impl MemoryBanks {
    /// Builds all three banks: memory rows are the L2-normalized embeddings,
    /// cluster labels come from the K-Means result, centroids are class- and
    /// cluster-wise means. Clusters K-Means left empty inherit its centroid
    /// and start stale.
    pub fn init_memory(
        embeddings: &Tensor,
        class_labels: &[usize],
        clustering: &Clustering,
        n_classes: usize,
        n_clusters: usize,
    ) -> Result<MemoryBanks> {
        let n = embeddings.rows();
        if class_labels.len() != n || clustering.assignments.len() != n {
            return Err(ScanError::data(format!(
                "init_memory length mismatch: {n} embeddings, {} class labels, {} cluster labels",
                class_labels.len(),
                clustering.assignments.len()
            )));
        }
        if clustering.centroids.rows() != n_clusters || clustering.centroids.cols() != embeddings.cols() {
            return Err(ScanError::shape(format!(
                "clustering centroids {:?} incompatible with {n_clusters} clusters of dim {}",
                clustering.centroids.shape(),
                embeddings.cols()
            )));
        }
        if let Some(&y) = class_labels.iter().find(|&&y| y >= n_classes) {
            return Err(ScanError::data(format!("class label {y} out of range ({n_classes} classes)")));
        }
        let rows = normalize_rows(embeddings)?;
        let mut banks = MemoryBanks {
            embeddings: rows,
            class_labels: class_labels.to_vec(),
            cluster_labels: clustering.assignments.clone(),
            class_centroids: Tensor::zeros(&[n_classes, embeddings.cols()]),
            cluster_centroids: clustering.centroids.clone(),
            cluster_stale: vec![false; n_clusters],
            n_classes,
            n_clusters,
        };
        banks.refresh_centroids();
        Ok(banks)
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.embeddings.row(i)
    }

    pub fn class_label(&self, i: usize) -> usize {
        self.class_labels[i]
    }

    pub fn cluster_label(&self, i: usize) -> usize {
        self.cluster_labels[i]
    }

    pub fn class_labels(&self) -> &[usize] {
        &self.class_labels
    }

    pub fn cluster_labels(&self) -> &[usize] {
        &self.cluster_labels
    }

    pub fn class_centroid(&self, c: usize) -> &[f64] {
        self.class_centroids.row(c)
    }

    pub fn cluster_centroid(&self, s: usize) -> &[f64] {
        self.cluster_centroids.row(s)
    }

    pub fn cluster_centroids(&self) -> &Tensor {
        &self.cluster_centroids
    }

    pub fn cluster_is_stale(&self, s: usize) -> bool {
        self.cluster_stale[s]
    }

    pub fn nonempty_cluster_count(&self) -> usize {
        self.cluster_stale.iter().filter(|&&s| !s).count()
    }

    /// Members per cluster, for occupancy reporting.
    pub fn cluster_occupancy(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_clusters];
        for &s in &self.cluster_labels {
            counts[s] += 1;
        }
        counts
    }

    /// `f_m_i <- beta * f_i/||f_i|| + (1-beta) * f_m_i`, stored as-is.
    pub fn momentum_update(&mut self, i: usize, f_i: &[f64], beta: f64) -> Result<()> {
        if i >= self.len() {
            return Err(ScanError::data(format!("memory row {i} out of range ({})", self.len())));
        }
        if f_i.len() != self.dim() {
            return Err(ScanError::shape(format!(
                "momentum_update dim {} vs memory dim {}",
                f_i.len(),
                self.dim()
            )));
        }
        let norm = slice_norm(f_i);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(ScanError::numeric(format!(
                "momentum_update for row {i}: embedding norm {norm} is not positive and finite"
            )));
        }
        for (m, &f) in self.embeddings.row_mut(i).iter_mut().zip(f_i) {
            *m = beta * (f / norm) + (1.0 - beta) * *m;
        }
        Ok(())
    }

    /// Reassigns row `i`'s cluster label to the nearest cluster centroid.
    /// The class label is untouched (it is write-once by construction).
    pub fn reassign_cluster_label(&mut self, i: usize) -> Result<()> {
        let row = Tensor::from_vec(vec![1, self.dim()], self.embeddings.row(i).to_vec())?;
        self.cluster_labels[i] = assign_nearest(&row, &self.cluster_centroids)?[0];
        Ok(())
    }

    /// Epoch-end pass: every row reassigned against the current centroids.
    pub fn reassign_all(&mut self) -> Result<()> {
        let labels = assign_nearest(&self.embeddings, &self.cluster_centroids)?;
        self.cluster_labels = labels;
        Ok(())
    }

    /// Recomputes both centroid banks from the current rows and labels.
    /// Empty clusters keep their previous centroid and are flagged stale.
    pub fn refresh_centroids(&mut self) {
        let d = self.dim();
        let mut class_sums = Tensor::zeros(&[self.n_classes, d]);
        let mut class_counts = vec![0usize; self.n_classes];
        let mut cluster_sums = Tensor::zeros(&[self.n_clusters, d]);
        let mut cluster_counts = vec![0usize; self.n_clusters];
        for i in 0..self.len() {
            let row = self.embeddings.row(i).to_vec();
            let y = self.class_labels[i];
            class_counts[y] += 1;
            for (acc, v) in class_sums.row_mut(y).iter_mut().zip(&row) {
                *acc += v;
            }
            let s = self.cluster_labels[i];
            cluster_counts[s] += 1;
            for (acc, v) in cluster_sums.row_mut(s).iter_mut().zip(&row) {
                *acc += v;
            }
        }
        for c in 0..self.n_classes {
            if class_counts[c] == 0 {
                let prev = self.class_centroids.row(c).to_vec();
                class_sums.row_mut(c).copy_from_slice(&prev);
            } else {
                let inv = 1.0 / class_counts[c] as f64;
                for v in class_sums.row_mut(c) {
                    *v *= inv;
                }
            }
        }
        for s in 0..self.n_clusters {
            if cluster_counts[s] == 0 {
                let prev = self.cluster_centroids.row(s).to_vec();
                cluster_sums.row_mut(s).copy_from_slice(&prev);
                self.cluster_stale[s] = true;
            } else {
                let inv = 1.0 / cluster_counts[s] as f64;
                for v in cluster_sums.row_mut(s) {
                    *v *= inv;
                }
                self.cluster_stale[s] = false;
            }
        }
        self.class_centroids = class_sums;
        self.cluster_centroids = cluster_sums;
    }

    /// Raw state for checkpoint serialization.
    pub fn to_parts(&self) -> MemoryParts {
        MemoryParts {
            embeddings: self.embeddings.clone(),
            class_labels: self.class_labels.clone(),
            cluster_labels: self.cluster_labels.clone(),
            class_centroids: self.class_centroids.clone(),
            cluster_centroids: self.cluster_centroids.clone(),
            cluster_stale: self.cluster_stale.clone(),
        }
    }

    /// Rebuilds banks from checkpointed state, validating consistency.
    pub fn from_parts(parts: MemoryParts) -> Result<MemoryBanks> {
        let n = parts.embeddings.rows();
        if parts.class_labels.len() != n || parts.cluster_labels.len() != n {
            return Err(ScanError::data("memory parts have inconsistent row counts".to_string()));
        }
        let n_classes = parts.class_centroids.rows();
        let n_clusters = parts.cluster_centroids.rows();
        if parts.cluster_stale.len() != n_clusters {
            return Err(ScanError::data("stale flag count disagrees with cluster count".to_string()));
        }
        if let Some(&y) = parts.class_labels.iter().find(|&&y| y >= n_classes) {
            return Err(ScanError::data(format!("class label {y} out of range")));
        }
        if let Some(&s) = parts.cluster_labels.iter().find(|&&s| s >= n_clusters) {
            return Err(ScanError::data(format!("cluster label {s} out of range")));
        }
        Ok(MemoryBanks {
            embeddings: parts.embeddings,
            class_labels: parts.class_labels,
            cluster_labels: parts.cluster_labels,
            class_centroids: parts.class_centroids,
            cluster_centroids: parts.cluster_centroids,
            cluster_stale: parts.cluster_stale,
            n_classes,
            n_clusters,
        })
    }
}

/// Serializable snapshot of [`MemoryBanks`].
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryParts {
    pub embeddings: Tensor,
    pub class_labels: Vec<usize>,
    pub cluster_labels: Vec<usize>,
    pub class_centroids: Tensor,
    pub cluster_centroids: Tensor,
    pub cluster_stale: Vec<bool>,
}

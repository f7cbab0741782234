//! K-Means (k-means++ seeding, Lloyd iterations), nearest-centroid
//! assignment, the cluster-error-rate metric, and adjusted Rand index.
//!
//! Distances are squared Euclidean; callers are expected to pass
//! L2-normalized embeddings so distances stay on the memory-bank scale.

use crate::error::{Result, ScanError};
use crate::rng::SeededRng;
use crate::tensor::{sq_dist, Tensor};

#[derive(Debug, Clone)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Relative inertia improvement below which Lloyd stops.
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest-inertia run wins. Restarts
    /// draw sequentially from the caller's rng, so results stay seeded.
    pub n_init: usize,
}

impl KMeansConfig {
    pub fn new(k: usize) -> KMeansConfig {
        KMeansConfig { k, max_iters: 100, tol: 1e-6, n_init: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct Clustering {
    /// `k x d` centroid matrix.
    pub centroids: Tensor,
    /// Per-sample index of the nearest centroid (ties -> lowest index).
    pub assignments: Vec<usize>,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
    /// Inertia after each Lloyd assignment step; non-increasing.
    pub inertia_trace: Vec<f64>,
}

/// Lloyd's algorithm from k-means++ seeds.
pub fn kmeans_fit(features: &Tensor, cfg: &KMeansConfig, rng: &mut SeededRng) -> Result<Clustering> {
    if features.rank() != 2 {
        return Err(ScanError::shape(format!("kmeans expects N x d features, got {:?}", features.shape())));
    }
    let n = features.rows();
    if cfg.k == 0 {
        return Err(ScanError::config("kmeans k must be positive".to_string()));
    }
    if cfg.k > n {
        return Err(ScanError::config(format!("kmeans k={} exceeds sample count {n}", cfg.k)));
    }
    if !features.is_finite() {
        return Err(ScanError::numeric("kmeans features contain non-finite values".to_string()));
    }
    if cfg.n_init == 0 {
        return Err(ScanError::config("kmeans n_init must be positive".to_string()));
    }

    let mut best: Option<Clustering> = None;
    for _ in 0..cfg.n_init {
        let run = lloyd_run(features, cfg, rng)?;
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd_run(features: &Tensor, cfg: &KMeansConfig, rng: &mut SeededRng) -> Result<Clustering> {
    let mut centroids = plus_plus_seeds(features, cfg.k, rng);
    let mut assignments = assign_nearest(features, &centroids)?;
    let mut inertia = inertia_of(features, &centroids, &assignments);
    let mut trace = vec![inertia];

    for _ in 0..cfg.max_iters {
        let (next_centroids, _empty) = recompute_centroids(features, &assignments, cfg.k, Some(&centroids))?;
        let next_assignments = assign_nearest(features, &next_centroids)?;
        let next_inertia = inertia_of(features, &next_centroids, &next_assignments);
        let unchanged = next_assignments == assignments;
        centroids = next_centroids;
        assignments = next_assignments;
        let improvement = inertia - next_inertia;
        trace.push(next_inertia);
        let rel = if inertia > 0.0 { improvement / inertia } else { 0.0 };
        inertia = next_inertia;
        if unchanged || rel < cfg.tol {
            break;
        }
    }
    Ok(Clustering { centroids, assignments, inertia, inertia_trace: trace })
}

/// k-means++ seeding: first seed uniform, then D^2-weighted draws.
fn plus_plus_seeds(features: &Tensor, k: usize, rng: &mut SeededRng) -> Tensor {
    let n = features.rows();
    let mut chosen: Vec<usize> = vec![rng.index(n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(features.row(i), features.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // All remaining mass is on already-chosen points (duplicates).
            rng.index(n)
        };
        chosen.push(next);
        for i in 0..n {
            let d = sq_dist(features.row(i), features.row(next));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    let rows: Vec<Vec<f64>> = chosen.iter().map(|&i| features.row(i).to_vec()).collect();
    Tensor::from_rows(&rows).expect("non-empty seed rows")
}

/// Index of the nearest centroid for every feature row; ties break to the
/// lowest centroid index.
pub fn assign_nearest(features: &Tensor, centroids: &Tensor) -> Result<Vec<usize>> {
    if centroids.rank() != 2 || centroids.rows() == 0 {
        return Err(ScanError::shape("assign_nearest requires a non-empty k x d centroid matrix".to_string()));
    }
    if features.rank() != 2 || features.cols() != centroids.cols() {
        return Err(ScanError::shape(format!(
            "assign_nearest dims disagree: features {:?} vs centroids {:?}",
            features.shape(),
            centroids.shape()
        )));
    }
    let mut labels = Vec::with_capacity(features.rows());
    for i in 0..features.rows() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for c in 0..centroids.rows() {
            let d = sq_dist(features.row(i), centroids.row(c));
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        labels.push(best);
    }
    Ok(labels)
}

/// Mean of each cluster's members. Empty clusters keep the previous centroid
/// (or zero when none is supplied) and are reported by index.
pub fn recompute_centroids(
    features: &Tensor,
    labels: &[usize],
    k: usize,
    previous: Option<&Tensor>,
) -> Result<(Tensor, Vec<usize>)> {
    if labels.len() != features.rows() {
        return Err(ScanError::shape(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.rows()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= k) {
        return Err(ScanError::data(format!("cluster label {l} out of range (k={k})")));
    }
    let d = features.cols();
    let mut sums = Tensor::zeros(&[k, d]);
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        let row = sums.row_mut(l);
        for (acc, v) in row.iter_mut().zip(features.row(i)) {
            *acc += v;
        }
    }
    let mut empty = Vec::new();
    for c in 0..k {
        if counts[c] == 0 {
            empty.push(c);
            if let Some(prev) = previous {
                let prev_row = prev.row(c).to_vec();
                sums.row_mut(c).copy_from_slice(&prev_row);
            }
        } else {
            let inv = 1.0 / counts[c] as f64;
            for v in sums.row_mut(c) {
                *v *= inv;
            }
        }
    }
    Ok((sums, empty))
}

fn inertia_of(features: &Tensor, centroids: &Tensor, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(features.row(i), centroids.row(l)))
        .sum()
}

/// Fraction of samples whose class differs from their cluster's majority
/// class (majority ties -> lowest class index).
pub fn cluster_error_rate(cluster_labels: &[usize], class_labels: &[usize]) -> Result<f64> {
    if cluster_labels.is_empty() || cluster_labels.len() != class_labels.len() {
        return Err(ScanError::data(format!(
            "cluster_error_rate needs equal non-empty label lists, got {} and {}",
            cluster_labels.len(),
            class_labels.len()
        )));
    }
    let n_clusters = cluster_labels.iter().max().unwrap() + 1;
    let n_classes = class_labels.iter().max().unwrap() + 1;
    let mut counts = vec![vec![0usize; n_classes]; n_clusters];
    for (&cl, &y) in cluster_labels.iter().zip(class_labels) {
        counts[cl][y] += 1;
    }
    let mut wrong = 0usize;
    for per_class in &counts {
        let total: usize = per_class.iter().sum();
        if total == 0 {
            continue;
        }
        // Majority with ties to the lowest class index: strict > scan.
        let mut best_class = 0usize;
        for (c, &cnt) in per_class.iter().enumerate() {
            if cnt > per_class[best_class] {
                best_class = c;
            }
        }
        wrong += total - per_class[best_class];
    }
    Ok(wrong as f64 / cluster_labels.len() as f64)
}

/// Adjusted Rand index between two labelings (pair-counting form).
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(ScanError::data(format!(
            "adjusted_rand_index needs equal non-empty label lists, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let choose2 = |v: u64| -> f64 { (v * v.saturating_sub(1)) as f64 / 2.0 };
    let index: f64 = table.iter().flatten().map(|&v| choose2(v)).sum();
    let row_sum: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let col_sum: f64 = (0..kb).map(|j| choose2(table.iter().map(|r| r[j]).sum())).sum();
    let total = choose2(a.len() as u64);
    let expected = row_sum * col_sum / total;
    let max_index = 0.5 * (row_sum + col_sum);
    if (max_index - expected).abs() < 1e-15 {
        // Degenerate partitions (e.g. all singletons on both sides).
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Exhaustive search over all k^N assignments; the optimum inertia is
    /// the oracle for small instances.
    fn brute_force_inertia(features: &Tensor, k: usize) -> f64 {
        let n = features.rows();
        let mut best = f64::INFINITY;
        let mut assign = vec![0usize; n];
        loop {
            let (centroids, _) = recompute_centroids(features, &assign, k, None).unwrap();
            let inertia = inertia_of(features, &centroids, &assign);
            if inertia < best {
                best = inertia;
            }
            // Odometer increment over base-k assignment vectors.
            let mut pos = 0;
            loop {
                if pos == n {
                    return best;
                }
                assign[pos] += 1;
                if assign[pos] < k {
                    break;
                }
                assign[pos] = 0;
                pos += 1;
            }
        }
    }

    #[test]
    fn two_separated_pairs_recovered() {
        let f = feats(&[&[0.0], &[1.0], &[10.0], &[11.0]]);
        let mut rng = SeededRng::new(3);
        let c = kmeans_fit(&f, &KMeansConfig::new(2), &mut rng).unwrap();
        let mut centers: Vec<f64> = (0..2).map(|i| c.centroids.at2(i, 0)).collect();
        centers.sort_by(f64::total_cmp);
        assert!((centers[0] - 0.5).abs() < 1e-12);
        assert!((centers[1] - 10.5).abs() < 1e-12);
        assert_eq!(c.assignments[0], c.assignments[1]);
        assert_eq!(c.assignments[2], c.assignments[3]);
        assert_ne!(c.assignments[0], c.assignments[2]);
        let oracle = brute_force_inertia(&f, 2);
        assert!((c.inertia - oracle).abs() < 1e-9, "inertia {} vs oracle {oracle}", c.inertia);
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let f = feats(&[&[0.0, 1.0], &[2.0, 3.0], &[5.0, -1.0]]);
        let mut rng = SeededRng::new(4);
        let c = kmeans_fit(&f, &KMeansConfig::new(3), &mut rng).unwrap();
        assert!(c.inertia.abs() < 1e-12);
    }

    #[test]
    fn identical_seeds_identical_clusterings() {
        let mut data_rng = SeededRng::new(9);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| data_rng.normal()).collect()).collect();
        let f = Tensor::from_rows(&rows).unwrap();
        let a = kmeans_fit(&f, &KMeansConfig::new(5), &mut SeededRng::new(42)).unwrap();
        let b = kmeans_fit(&f, &KMeansConfig::new(5), &mut SeededRng::new(42)).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.inertia, b.inertia);
    }

    #[test]
    fn kmeans_rejects_bad_k() {
        let f = feats(&[&[0.0], &[1.0]]);
        let mut rng = SeededRng::new(1);
        assert!(kmeans_fit(&f, &KMeansConfig::new(0), &mut rng).is_err());
        assert!(kmeans_fit(&f, &KMeansConfig::new(3), &mut rng).is_err());
    }

    #[test]
    fn inertia_trace_is_monotone_non_increasing() {
        let mut data_rng = SeededRng::new(11);
        let rows: Vec<Vec<f64>> = (0..60).map(|_| (0..3).map(|_| data_rng.normal() * 2.0).collect()).collect();
        let f = Tensor::from_rows(&rows).unwrap();
        let c = kmeans_fit(&f, &KMeansConfig::new(4), &mut SeededRng::new(5)).unwrap();
        assert!(c.inertia_trace.len() >= 2);
        for w in c.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "inertia increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn near_optimal_on_small_instances_for_most_seeds() {
        // Separated 2-D blob instances with <= 8 points and k <= 3; the
        // k-means++ result must hit the brute-force optimum on >= 95/100 seeds.
        let mut hits = 0;
        for seed in 0..100u64 {
            let mut rng = SeededRng::new(seed);
            let k = 2 + (seed % 2) as usize;
            let n = 5 + (seed % 4) as usize;
            let mut rows = Vec::with_capacity(n);
            for i in 0..n {
                let blob = i % k;
                let cx = (blob as f64) * 5.0;
                rows.push(vec![cx + 0.3 * rng.normal(), 0.3 * rng.normal()]);
            }
            let f = Tensor::from_rows(&rows).unwrap();
            let fit = kmeans_fit(&f, &KMeansConfig::new(k), &mut rng).unwrap();
            let oracle = brute_force_inertia(&f, k);
            if (fit.inertia - oracle).abs() < 1e-9 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "only {hits}/100 seeds reached brute-force optimum");
    }

    #[test]
    fn assign_exact_centroid_and_tie_break() {
        let centroids = feats(&[&[3.0, 3.0], &[1.0, 0.0], &[0.0, 1.0], &[5.0, 5.0]]);
        let f = feats(&[&[5.0, 5.0], &[0.5, 0.5]]);
        let labels = assign_nearest(&f, &centroids).unwrap();
        assert_eq!(labels[0], 3, "feature equal to centroid 3 gets label 3");
        // (0.5,0.5) is equidistant from centroids 1 and 2 -> lowest index.
        assert_eq!(labels[1], 1);
    }

    #[test]
    fn assign_matches_exhaustive_scan_oracle() {
        let mut rng = SeededRng::new(21);
        let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
        let cents: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
        let f = Tensor::from_rows(&rows).unwrap();
        let c = Tensor::from_rows(&cents).unwrap();
        let fast = assign_nearest(&f, &c).unwrap();
        for (i, &label) in fast.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for j in 0..c.rows() {
                let d = sq_dist(f.row(i), c.row(j));
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assert_eq!(label, best, "sample {i}");
        }
    }

    #[test]
    fn assign_rejects_empty_centroids() {
        let f = feats(&[&[0.0]]);
        let c = Tensor::from_vec(vec![1, 0], vec![]).unwrap_err();
        let _ = c; // zero-dim tensors cannot even be built; use rank mismatch
        let bad = Tensor::zeros(&[3]);
        assert!(assign_nearest(&f, &bad).is_err());
    }

    #[test]
    fn recompute_means_and_empty_report() {
        let f = feats(&[&[0.0, 0.0], &[2.0, 0.0], &[7.0, 7.0]]);
        let labels = [0usize, 0, 2];
        let prev = feats(&[&[9.0, 9.0], &[4.0, 4.0], &[0.0, 0.0]]);
        let (cents, empty) = recompute_centroids(&f, &labels, 3, Some(&prev)).unwrap();
        assert_eq!(cents.row(0), &[1.0, 0.0]);
        assert_eq!(cents.row(1), &[4.0, 4.0], "empty cluster keeps previous centroid");
        assert_eq!(cents.row(2), &[7.0, 7.0], "singleton centroid equals member");
        assert_eq!(empty, vec![1]);
    }

    #[test]
    fn converged_clustering_is_a_fixed_point() {
        let mut data_rng = SeededRng::new(31);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 4) as f64 * 6.0 + 0.1 * data_rng.normal(), 0.1 * data_rng.normal()])
            .collect();
        let f = Tensor::from_rows(&rows).unwrap();
        let c = kmeans_fit(&f, &KMeansConfig::new(4), &mut SeededRng::new(8)).unwrap();
        let (cents2, _) = recompute_centroids(&f, &c.assignments, 4, Some(&c.centroids)).unwrap();
        let labels2 = assign_nearest(&f, &cents2).unwrap();
        assert_eq!(labels2, c.assignments, "one more round must not move a converged fit");
    }

    #[test]
    fn error_rate_hand_counts() {
        // clusters {[A,A,B],[B,B]} -> 1 wrong of 5.
        let clusters = [0usize, 0, 0, 1, 1];
        let classes = [0usize, 0, 1, 1, 1];
        let rate = cluster_error_rate(&clusters, &classes).unwrap();
        assert!((rate - 0.2).abs() < 1e-12);

        let pure_rate = cluster_error_rate(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap();
        assert_eq!(pure_rate, 0.0);
    }

    #[test]
    fn error_rate_majority_tie_breaks_to_lowest_class() {
        // One cluster with classes {1, 0}: tie -> majority class 0 -> one wrong.
        let rate = cluster_error_rate(&[0, 0], &[1, 0]).unwrap();
        assert!((rate - 0.5).abs() < 1e-12);
    }

    #[test]
    fn error_rate_rejects_empty_or_mismatched() {
        assert!(cluster_error_rate(&[], &[]).is_err());
        assert!(cluster_error_rate(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn ari_known_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        let anti = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!((anti + 0.5).abs() < 1e-12, "crossing partition gives -0.5, got {anti}");
        let perfect = adjusted_rand_index(&[2, 0, 1, 1, 0], &[0, 1, 2, 2, 1]).unwrap();
        assert_eq!(perfect, 1.0, "label permutation is still a perfect match");
    }
}

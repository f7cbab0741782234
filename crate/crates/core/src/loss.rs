//! The training objective: class cross-entropy, cluster cross-entropy over
//! memory pseudo-labels, and the purity triplet loss mined from the banks,
//! combined as `total = class + cluster + lambda * purity`.
//!
//! Every loss returns its gradient alongside the value so the training loop
//! and the finite-difference checks share one code path.

use crate::error::{Result, ScanError};
use crate::memory::MemoryBanks;
use crate::tensor::{sq_dist, Tensor};

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    /// Triplet margin alpha.
    pub alpha: f64,
    /// Purity weight lambda.
    pub lambda: f64,
    pub purity_reduction: PurityReduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 0.3, lambda: 1.0, purity_reduction: PurityReduction::Sum }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(ScanError::config(format!("alpha {} must be >= 0", self.alpha)));
        }
        if self.lambda < 0.0 {
            return Err(ScanError::config(format!("lambda {} must be >= 0", self.lambda)));
        }
        Ok(())
    }
}

/// Batch reduction for the purity term. The written form is a plain sum;
/// mean divides by the anchor count for scale-free comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PurityReduction {
    #[default]
    Sum,
    Mean,
}

impl PurityReduction {
    pub fn as_str(&self) -> &'static str {
        match self {
            PurityReduction::Sum => "sum",
            PurityReduction::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Result<PurityReduction> {
        match s {
            "sum" => Ok(PurityReduction::Sum),
            "mean" => Ok(PurityReduction::Mean),
            other => Err(ScanError::config(format!(
                "unknown purity reduction '{other}' (expected sum or mean)"
            ))),
        }
    }
}

/// Cross-entropy value, gradient, and clamp diagnostics.
#[derive(Debug, Clone)]
pub struct CeLoss {
    pub loss: f64,
    /// Gradient w.r.t. the probability matrix.
    pub grad: Tensor,
    /// Number of target probabilities clamped at 1e-12.
    pub clamped: usize,
}

const PROB_CLAMP: f64 = 1e-12;

fn cross_entropy(p: &Tensor, labels: &[usize], what: &str) -> Result<CeLoss> {
    if p.rank() != 2 || p.rows() != labels.len() {
        return Err(ScanError::shape(format!(
            "{what}: {} labels for probability matrix {:?}",
            labels.len(),
            p.shape()
        )));
    }
    if labels.is_empty() {
        return Err(ScanError::data(format!("{what}: empty batch")));
    }
    let cols = p.cols();
    if let Some(&y) = labels.iter().find(|&&y| y >= cols) {
        return Err(ScanError::data(format!("{what}: label {y} out of range ({cols} columns)")));
    }
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(p.shape());
    let mut clamped = 0;
    for (i, &y) in labels.iter().enumerate() {
        let pv = p.at2(i, y);
        let safe = if pv < PROB_CLAMP {
            clamped += 1;
            PROB_CLAMP
        } else {
            pv
        };
        loss -= safe.ln() / n;
        grad.row_mut(i)[y] = -1.0 / (n * safe);
    }
    Ok(CeLoss { loss, grad, clamped })
}

/// Mean over the batch of `-log p[i, y_i]` for class labels.
pub fn class_ce(p: &Tensor, labels: &[usize]) -> Result<CeLoss> {
    cross_entropy(p, labels, "class_ce")
}

/// Mean over the batch of `-log p'[i, y'_i]` for cluster pseudo-labels.
pub fn cluster_ce(p_prime: &Tensor, pseudo_labels: &[usize]) -> Result<CeLoss> {
    cross_entropy(p_prime, pseudo_labels, "cluster_ce")
}

/// One mined positive/negative pair for a purity anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    /// Class centroid of the anchor's class.
    pub positive: Vec<f64>,
    /// Nearest cross-class memory row within the anchor's cluster.
    pub negative: Vec<f64>,
    /// Memory row index the negative came from.
    pub negative_index: usize,
}

/// Mines the purity pair for memory row `i`: positive is the anchor's class
/// centroid; negative is the closest memory row sharing cluster `y'_i` but
/// not class `y_i` (distance measured to the stored row `f_m_i`, ties to the
/// lowest row index). Returns `None` when the anchor's cluster is class-pure.
pub fn mine_triplet(banks: &MemoryBanks, i: usize) -> Option<Triplet> {
    let anchor_class = banks.class_label(i);
    let anchor_cluster = banks.cluster_label(i);
    let anchor_row = banks.row(i);
    let mut best: Option<(usize, f64)> = None;
    for j in 0..banks.len() {
        if banks.cluster_label(j) != anchor_cluster || banks.class_label(j) == anchor_class {
            continue;
        }
        let d = sq_dist(anchor_row, banks.row(j));
        let closer = match best {
            None => true,
            Some((_, bd)) => d < bd,
        };
        if closer {
            best = Some((j, d));
        }
    }
    best.map(|(j, _)| Triplet {
        positive: banks.class_centroid(anchor_class).to_vec(),
        negative: banks.row(j).to_vec(),
        negative_index: j,
    })
}

/// Mines pairs for a whole batch of memory row indices.
pub fn mine_batch(banks: &MemoryBanks, indices: &[usize]) -> Vec<Option<Triplet>> {
    indices.iter().map(|&i| mine_triplet(banks, i)).collect()
}

/// Purity value, gradient w.r.t. the (normalized) anchors, triplet counts.
#[derive(Debug, Clone)]
pub struct PurityLoss {
    pub loss: f64,
    /// d loss / d anchor, same shape as the anchor matrix. Positives and
    /// negatives are memory snapshots and receive no gradient.
    pub grad: Tensor,
    pub active: usize,
    pub skipped: usize,
}

/// Hinge triplet loss over mined pairs:
/// `sum_i max(||f_i - f_i_p||^2 - ||f_i - f_i_n||^2 + alpha, 0)`,
/// with anchors expected to be L2-normalized rows.
pub fn purity_loss(
    anchors: &Tensor,
    pairs: &[Option<Triplet>],
    alpha: f64,
    reduction: PurityReduction,
) -> Result<PurityLoss> {
    if anchors.rank() != 2 || anchors.rows() != pairs.len() {
        return Err(ScanError::shape(format!(
            "purity_loss: {} pairs for anchor matrix {:?}",
            pairs.len(),
            anchors.shape()
        )));
    }
    let scale = match reduction {
        PurityReduction::Sum => 1.0,
        PurityReduction::Mean => 1.0 / pairs.len().max(1) as f64,
    };
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(anchors.shape());
    let mut active = 0;
    let mut skipped = 0;
    for (i, pair) in pairs.iter().enumerate() {
        let Some(t) = pair else {
            skipped += 1;
            continue;
        };
        let f = anchors.row(i);
        if t.positive.len() != f.len() || t.negative.len() != f.len() {
            return Err(ScanError::shape(format!(
                "purity_loss: pair dims ({}, {}) vs anchor dim {}",
                t.positive.len(),
                t.negative.len(),
                f.len()
            )));
        }
        let margin = sq_dist(f, &t.positive) - sq_dist(f, &t.negative) + alpha;
        if margin > 0.0 {
            active += 1;
            loss += scale * margin;
            // d/df [ (f-p).(f-p) - (f-n).(f-n) ] = 2 (n - p).
            let row = grad.row_mut(i);
            for ((g, &pv), &nv) in row.iter_mut().zip(&t.positive).zip(&t.negative) {
                *g = scale * 2.0 * (nv - pv);
            }
        } else {
            // Margin satisfied: zero loss, zero gradient.
        }
    }
    Ok(PurityLoss { loss, grad, active, skipped })
}

/// Per-step loss record; the additivity invariant is enforced on build.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub class_loss: f64,
    pub cluster_loss: f64,
    pub purity_loss: f64,
    pub total: f64,
    pub active_triplets: usize,
    pub skipped_triplets: usize,
}

/// Combines the three components. Non-finite inputs abort with a diagnostic
/// naming the offending component.
pub fn total_loss(
    class_loss: f64,
    cluster_loss: f64,
    purity: f64,
    lambda: f64,
    active_triplets: usize,
    skipped_triplets: usize,
) -> Result<LossBreakdown> {
    for (name, v) in [("class", class_loss), ("cluster", cluster_loss), ("purity", purity)] {
        if !v.is_finite() {
            return Err(ScanError::numeric(format!("{name} loss is not finite: {v}")));
        }
    }
    Ok(LossBreakdown {
        class_loss,
        cluster_loss,
        purity_loss: purity,
        total: class_loss + cluster_loss + lambda * purity,
        active_triplets,
        skipped_triplets,
    })
}

//! N-way K-shot episodic evaluation on frozen features.
//!
//! Episodes are sampled from the novel split; a small logistic-regression
//! classifier is fitted on each episode's support features and scored on its
//! query features. Episode sampling is a pure function of `(seed, episode
//! index)`, so evaluation order (or parallelism) cannot change results.
//!
//! Inputs are feature tables (`sample x dim`), expected L2-row-normalized.
//! Keeping the encoder out of this module lets tests drive the pipeline with
//! hand-built oracle features.

use crate::error::{Result, ScanError};
use crate::rng::SeededRng;
use crate::tensor::{matmul, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierBudget {
    /// Full-batch gradient-descent steps.
    pub steps: usize,
    pub lr: f64,
    /// L2 penalty on the weights (not the bias).
    pub l2: f64,
}

impl Default for ClassifierBudget {
    fn default() -> Self {
        ClassifierBudget { steps: 100, lr: 0.01, l2: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub n_way: usize,
    pub k_shot: usize,
    /// Query samples per episode class.
    pub q_per_class: usize,
    /// Number of episodes to sample.
    pub episodes: usize,
    pub seed: u64,
    pub classifier: ClassifierBudget,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_way: 2,
            k_shot: 1,
            q_per_class: 5,
            episodes: 600,
            seed: 0,
            classifier: ClassifierBudget::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(ScanError::config(format!("n_way must be >= 2, got {}", self.n_way)));
        }
        if self.k_shot == 0 || self.q_per_class == 0 {
            return Err(ScanError::config(
                "k_shot and q_per_class must be positive".to_string(),
            ));
        }
        if self.episodes == 0 {
            return Err(ScanError::config("episodes must be positive".to_string()));
        }
        // steps = 0 is legal: an untrained (uniform) classifier probe.
        if !(self.classifier.lr >= 0.0 && self.classifier.l2 >= 0.0) {
            return Err(ScanError::config("classifier lr and l2 must be non-negative".to_string()));
        }
        Ok(())
    }
}

/// One sampled episode. Sample ids index the caller's novel feature table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    /// (sample id, episode-local label in [0, n_way)).
    pub support: Vec<(usize, usize)>,
    /// Same encoding; disjoint from `support` by sample id.
    pub query: Vec<(usize, usize)>,
    /// Episode-local label -> global novel class index.
    pub class_map: Vec<usize>,
}

/// Draws episode `index` deterministically: classes uniformly without
/// replacement from the feasible classes (those with at least `k_shot +
/// q_per_class` samples), then support and query samples uniformly without
/// replacement within each chosen class.
///
/// `members[c]` lists the sample ids of novel class `c`. Errors if fewer than
/// `n_way` classes are feasible, listing each deficient class and its count.
pub fn sample_episode(members: &[Vec<usize>], cfg: &EvalConfig, index: u64) -> Result<Episode> {
    cfg.validate()?;
    let need = cfg.k_shot + cfg.q_per_class;
    let feasible: Vec<usize> =
        (0..members.len()).filter(|&c| members[c].len() >= need).collect();
    if feasible.len() < cfg.n_way {
        let deficient: Vec<String> = (0..members.len())
            .filter(|&c| members[c].len() < need)
            .map(|c| format!("class {c} has {} < {need} samples", members[c].len()))
            .collect();
        return Err(ScanError::data(format!(
            "cannot sample a {}-way {}-shot episode with {} queries per class: only {} of {} \
             classes are feasible ({})",
            cfg.n_way,
            cfg.k_shot,
            cfg.q_per_class,
            feasible.len(),
            members.len(),
            deficient.join("; ")
        )));
    }
    let mut rng = SeededRng::new(cfg.seed).substream_indexed("episode", index);
    let class_map: Vec<usize> = rng
        .choose_indices(feasible.len(), cfg.n_way)
        .into_iter()
        .map(|fi| feasible[fi])
        .collect();
    let mut support = Vec::with_capacity(cfg.n_way * cfg.k_shot);
    let mut query = Vec::with_capacity(cfg.n_way * cfg.q_per_class);
    for (local, &c) in class_map.iter().enumerate() {
        let picks = rng.choose_indices(members[c].len(), need);
        for &p in &picks[..cfg.k_shot] {
            support.push((members[c][p], local));
        }
        for &p in &picks[cfg.k_shot..] {
            query.push((members[c][p], local));
        }
    }
    Ok(Episode { support, query, class_map })
}

/// Episode-specific linear classifier: `n_way`-class logistic regression.
#[derive(Debug, Clone)]
pub struct EpisodicClassifier {
    /// `dim x n_way` weights.
    pub weights: Tensor,
    pub bias: Vec<f64>,
    /// Set when the support features were all identical; the classifier is
    /// the uniform predictor in that case.
    pub degenerate: bool,
}

impl EpisodicClassifier {
    /// Softmax probabilities, one row per feature row.
    pub fn predict_proba(&self, features: &Tensor) -> Result<Tensor> {
        let logits = matmul(features, &self.weights)?;
        let mut out = logits.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        Ok(out)
    }

    /// Argmax predictions (ties to the lowest class index).
    pub fn predict(&self, features: &Tensor) -> Result<Vec<usize>> {
        let proba = self.predict_proba(features)?;
        Ok((0..proba.rows())
            .map(|i| {
                let row = proba.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

/// Fits the episodic classifier by full-batch gradient descent from zero
/// initialization. The loss is mean cross-entropy plus `l2/2 * ||W||^2`;
/// the mean reduction makes a duplicated support set yield the identical
/// classifier.
pub fn fit_episodic_classifier(
    support: &Tensor,
    labels: &[usize],
    n_way: usize,
    budget: &ClassifierBudget,
) -> Result<EpisodicClassifier> {
    if support.rank() != 2 || support.rows() != labels.len() || labels.is_empty() {
        return Err(ScanError::shape(format!(
            "episodic classifier: {} labels for features {:?}",
            labels.len(),
            support.shape()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= n_way) {
        return Err(ScanError::data(format!("episode label {y} out of range ({n_way}-way)")));
    }
    let dim = support.cols();
    let degenerate = (1..support.rows()).all(|i| support.row(i) == support.row(0));
    let mut clf = EpisodicClassifier {
        weights: Tensor::zeros(&[dim, n_way]),
        bias: vec![0.0; n_way],
        degenerate,
    };
    if degenerate {
        return Ok(clf);
    }
    let n = support.rows() as f64;
    for _ in 0..budget.steps {
        let proba = clf.predict_proba(support)?;
        // d mean-CE / d logits = (p - y_onehot) / n.
        let mut dlogits = proba;
        for (i, &y) in labels.iter().enumerate() {
            dlogits.row_mut(i)[y] -= 1.0;
        }
        let dlogits = dlogits.map(|v| v / n);
        let dw = matmul(&support.transpose2(), &dlogits)?;
        for r in 0..dim {
            for c in 0..n_way {
                let g = dw.at2(r, c) + budget.l2 * clf.weights.at2(r, c);
                let v = clf.weights.at2(r, c) - budget.lr * g;
                clf.weights.set2(r, c, v);
            }
        }
        for c in 0..n_way {
            let g: f64 = (0..dlogits.rows()).map(|i| dlogits.at2(i, c)).sum();
            clf.bias[c] -= budget.lr * g;
        }
    }
    Ok(clf)
}

/// Metrics of one evaluated episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// `confusion[true_label][predicted_label]` counts.
    pub confusion: Vec<Vec<usize>>,
}

/// Fits the episodic classifier on the episode's support rows of `features`
/// and scores the query rows. `features` holds one row per novel sample
/// (L2-normalized by the caller's convention).
pub fn evaluate_episode(
    episode: &Episode,
    features: &Tensor,
    cfg: &EvalConfig,
) -> Result<EpisodeResult> {
    let gather = |items: &[(usize, usize)]| -> Result<(Tensor, Vec<usize>)> {
        let mut rows = Vec::with_capacity(items.len());
        let mut labels = Vec::with_capacity(items.len());
        for &(id, y) in items {
            if id >= features.rows() {
                return Err(ScanError::data(format!(
                    "episode sample id {id} out of range ({} feature rows)",
                    features.rows()
                )));
            }
            rows.push(features.row(id).to_vec());
            labels.push(y);
        }
        Ok((Tensor::from_rows(&rows)?, labels))
    };
    let (sup_x, sup_y) = gather(&episode.support)?;
    let (qry_x, qry_y) = gather(&episode.query)?;
    let clf = fit_episodic_classifier(&sup_x, &sup_y, cfg.n_way, &cfg.classifier)?;
    let pred = clf.predict(&qry_x)?;

    let mut confusion = vec![vec![0usize; cfg.n_way]; cfg.n_way];
    for (&t, &p) in qry_y.iter().zip(&pred) {
        confusion[t][p] += 1;
    }
    let total: usize = confusion.iter().map(|r| r.iter().sum::<usize>()).sum();
    let trace: usize = (0..cfg.n_way).map(|i| confusion[i][i]).sum();
    let accuracy = trace as f64 / total as f64;
    let macro_f1 = macro_f1(&confusion);
    Ok(EpisodeResult { accuracy, macro_f1, confusion })
}

/// Per-class F1 averaged over classes; a class with no true and no predicted
/// samples (or zero precision + recall) scores 0.
pub fn macro_f1(confusion: &[Vec<usize>]) -> f64 {
    let n = confusion.len();
    let mut sum = 0.0;
    for c in 0..n {
        let tp = confusion[c][c] as f64;
        let fn_: f64 = (0..n).filter(|&j| j != c).map(|j| confusion[c][j] as f64).sum();
        let fp: f64 = (0..n).filter(|&i| i != c).map(|i| confusion[i][c] as f64).sum();
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        if precision + recall > 0.0 {
            sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    sum / n as f64
}

/// Macro-averaged sensitivity (recall): mean over classes of TP/(TP+FN).
pub fn mean_sensitivity(confusion: &[Vec<usize>]) -> f64 {
    let n = confusion.len();
    let mut sum = 0.0;
    for c in 0..n {
        let tp = confusion[c][c] as f64;
        let row: f64 = confusion[c].iter().map(|&v| v as f64).sum();
        if row > 0.0 {
            sum += tp / row;
        }
    }
    sum / n as f64
}

/// Macro-averaged specificity: mean over classes of TN/(TN+FP).
pub fn mean_specificity(confusion: &[Vec<usize>]) -> f64 {
    let n = confusion.len();
    let total: usize = confusion.iter().map(|r| r.iter().sum::<usize>()).sum();
    let mut sum = 0.0;
    for c in 0..n {
        let tp = confusion[c][c];
        let row: usize = confusion[c].iter().sum();
        let col: usize = (0..n).map(|i| confusion[i][c]).sum();
        let fp = col - tp;
        let tn = total - row - fp;
        let denom = (tn + fp) as f64;
        if denom > 0.0 {
            sum += tn as f64 / denom;
        }
    }
    sum / n as f64
}

/// Mean and 95% confidence half-width over episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// `1.96 * sample_stddev / sqrt(E)`.
    pub half_width: f64,
}

/// Aggregates one metric across episodes. Requires at least two values.
pub fn aggregate(values: &[f64]) -> Result<Summary> {
    let e = values.len();
    if e < 2 {
        return Err(ScanError::data(format!(
            "confidence interval needs at least 2 episodes, got {e}"
        )));
    }
    let mean = values.iter().sum::<f64>() / e as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (e - 1) as f64;
    Ok(Summary { mean, half_width: 1.96 * var.sqrt() / (e as f64).sqrt() })
}

/// Full evaluation: confusion-level results for every episode plus
/// aggregated accuracy and macro-F1.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub results: Vec<EpisodeResult>,
    pub accuracy: Summary,
    pub macro_f1: Summary,
    /// Episodes whose support features were degenerate (uniform classifier).
    pub degenerate_episodes: usize,
}

/// Samples and evaluates `cfg.episodes` episodes over a feature table.
/// `class_of[i]` is the novel class index of feature row `i`.
pub fn run_episodes(features: &Tensor, class_of: &[usize], cfg: &EvalConfig) -> Result<EvalReport> {
    if features.rank() != 2 || features.rows() != class_of.len() {
        return Err(ScanError::shape(format!(
            "{} class labels for feature table {:?}",
            class_of.len(),
            features.shape()
        )));
    }
    let n_classes = class_of.iter().max().map_or(0, |&m| m + 1);
    let mut members = vec![Vec::new(); n_classes];
    for (i, &c) in class_of.iter().enumerate() {
        members[c].push(i);
    }
    let mut results = Vec::with_capacity(cfg.episodes);
    let mut degenerate_episodes = 0;
    for index in 0..cfg.episodes {
        let episode = sample_episode(&members, cfg, index as u64)?;
        // Track degeneracy without re-fitting: identical support rows.
        let first = features.row(episode.support[0].0);
        if episode.support.iter().all(|&(id, _)| features.row(id) == first) {
            degenerate_episodes += 1;
        }
        results.push(evaluate_episode(&episode, features, cfg)?);
    }
    let accuracy = aggregate(&results.iter().map(|r| r.accuracy).collect::<Vec<_>>())?;
    let macro_f1 = aggregate(&results.iter().map(|r| r.macro_f1).collect::<Vec<_>>())?;
    Ok(EvalReport { results, accuracy, macro_f1, degenerate_episodes })
}

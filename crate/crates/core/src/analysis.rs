//! Feature-space discriminability statistics over the novel classes.
//!
//! Features are L2-normalized backbone outputs grouped by class. `d_inter`
//! measures mean squared distance between class means, `d_intra` the mean
//! squared scatter of each class around its own mean, and `phi` their ratio:
//! larger `phi` means classes are tighter relative to their separation.

use crate::error::{Result, ScanError};
use crate::tensor::{normalized, sq_dist, Tensor};

/// The three discriminability statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminabilityReport {
    pub d_inter: f64,
    pub d_intra: f64,
    /// `d_inter / d_intra`; `None` when `d_intra` is 0 (undefined).
    pub phi: Option<f64>,
}

/// Mean of the L2-normalized feature vectors of one class.
fn class_mean(features: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dim = features[0].len();
    let mut mu = vec![0.0; dim];
    for f in features {
        let unit = normalized(f)?;
        for (m, v) in mu.iter_mut().zip(&unit) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= features.len() as f64;
    }
    Ok(mu)
}

fn validate_classes(by_class: &[Vec<Vec<f64>>], min_classes: usize, what: &str) -> Result<()> {
    if by_class.len() < min_classes {
        return Err(ScanError::data(format!(
            "{what} needs at least {min_classes} classes, got {}",
            by_class.len()
        )));
    }
    for (c, feats) in by_class.iter().enumerate() {
        if feats.is_empty() {
            return Err(ScanError::data(format!("{what}: class {c} has no features")));
        }
    }
    Ok(())
}

/// Average over ordered pairs `m != n` of the squared distance between class
/// means: `1/(k(k-1)) * sum_m sum_{n != m} ||mu_m - mu_n||^2`.
pub fn d_inter(by_class: &[Vec<Vec<f64>>]) -> Result<f64> {
    validate_classes(by_class, 2, "d_inter")?;
    let means: Vec<Vec<f64>> =
        by_class.iter().map(|f| class_mean(f)).collect::<Result<_>>()?;
    let k = means.len();
    let mut sum = 0.0;
    for m in 0..k {
        for n in 0..k {
            if m != n {
                sum += sq_dist(&means[m], &means[n]);
            }
        }
    }
    Ok(sum / (k * (k - 1)) as f64)
}

/// Per-class mean squared distance of normalized features to the class mean,
/// averaged over classes.
pub fn d_intra(by_class: &[Vec<Vec<f64>>]) -> Result<f64> {
    validate_classes(by_class, 1, "d_intra")?;
    let mut total = 0.0;
    for feats in by_class {
        let mu = class_mean(feats)?;
        let mut class_sum = 0.0;
        for f in feats {
            class_sum += sq_dist(&normalized(f)?, &mu);
        }
        total += class_sum / feats.len() as f64;
    }
    Ok(total / by_class.len() as f64)
}

/// `d_inter / d_intra`; undefined (None) when `d_intra` is 0.
pub fn phi(d_inter: f64, d_intra: f64) -> Option<f64> {
    if d_intra > 0.0 {
        Some(d_inter / d_intra)
    } else {
        None
    }
}

/// Computes all three statistics for features grouped by class.
pub fn discriminability(by_class: &[Vec<Vec<f64>>]) -> Result<DiscriminabilityReport> {
    let inter = d_inter(by_class)?;
    let intra = d_intra(by_class)?;
    Ok(DiscriminabilityReport { d_inter: inter, d_intra: intra, phi: phi(inter, intra) })
}

/// Groups feature-table rows by their class index. `class_of[i]` labels row
/// `i`; classes must be contiguous `0..k`.
pub fn group_by_class(features: &Tensor, class_of: &[usize]) -> Result<Vec<Vec<Vec<f64>>>> {
    if features.rank() != 2 || features.rows() != class_of.len() {
        return Err(ScanError::shape(format!(
            "{} class labels for feature table {:?}",
            class_of.len(),
            features.shape()
        )));
    }
    let k = class_of.iter().max().map_or(0, |&m| m + 1);
    let mut grouped = vec![Vec::new(); k];
    for (i, &c) in class_of.iter().enumerate() {
        grouped[c].push(features.row(i).to_vec());
    }
    Ok(grouped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn orthogonal_singletons_give_d_inter_two() {
        // mu_1 = (1,0), mu_2 = (0,1): both ordered pairs contribute 2.0.
        let by_class = vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]];
        let v = d_inter(&by_class).unwrap();
        assert!((v - 2.0).abs() < 1e-15, "got {v}");
    }

    #[test]
    fn identical_classes_have_zero_d_inter() {
        let by_class = vec![vec![vec![0.6, 0.8]], vec![vec![0.6, 0.8]]];
        assert_eq!(d_inter(&by_class).unwrap(), 0.0);
    }

    #[test]
    fn d_inter_is_invariant_under_class_relabeling() {
        let mut rng = SeededRng::new(17);
        let mut by_class: Vec<Vec<Vec<f64>>> = (0..4)
            .map(|_| (0..3).map(|_| (0..5).map(|_| rng.normal()).collect()).collect())
            .collect();
        let a = d_inter(&by_class).unwrap();
        by_class.swap(0, 3);
        by_class.swap(1, 2);
        let b = d_inter(&by_class).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn two_orthogonal_members_give_intra_half() {
        // mu = (0.5, 0.5); each member sits at squared distance 0.5.
        let by_class = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]];
        let v = d_intra(&by_class).unwrap();
        assert!((v - 0.5).abs() < 1e-15, "got {v}");
    }

    #[test]
    fn singleton_classes_have_zero_d_intra() {
        let by_class = vec![vec![vec![3.0, 4.0]], vec![vec![0.0, 2.0]]];
        assert_eq!(d_intra(&by_class).unwrap(), 0.0);
    }

    #[test]
    fn phi_matches_reference_ratios() {
        // Reference inter/intra value pairs with their reference ratios.
        let p = phi(0.265644, 0.250569).unwrap();
        assert!((p - 1.060161).abs() < 1e-5, "got {p}");
        let p = phi(0.259522, 0.226078).unwrap();
        assert!((p - 1.147933).abs() < 1e-5, "got {p}");
        assert_eq!(phi(1.0, 1.0), Some(1.0));
        assert_eq!(phi(1.0, 0.0), None);
    }

    #[test]
    fn report_ratio_identity_holds() {
        let mut rng = SeededRng::new(23);
        let by_class: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|_| (0..4).map(|_| (0..6).map(|_| rng.normal()).collect()).collect())
            .collect();
        let r = discriminability(&by_class).unwrap();
        assert!(r.d_inter >= 0.0 && r.d_intra >= 0.0);
        let p = r.phi.unwrap();
        assert!((p * r.d_intra - r.d_inter).abs() < 1e-9);
    }

    /// Both statistics depend only on inner products of normalized features,
    /// so any orthogonal transform applied to every feature preserves them.
    #[test]
    fn statistics_are_invariant_under_rotation() {
        let mut rng = SeededRng::new(29);
        let by_class: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|_| (0..5).map(|_| (0..2).map(|_| rng.normal()).collect()).collect())
            .collect();
        // 2-D rotation by 0.7 rad.
        let (s, c) = (0.7f64).sin_cos();
        let rotate = |v: &Vec<f64>| vec![c * v[0] - s * v[1], s * v[0] + c * v[1]];
        let rotated: Vec<Vec<Vec<f64>>> =
            by_class.iter().map(|fs| fs.iter().map(rotate).collect()).collect();
        let a = discriminability(&by_class).unwrap();
        let b = discriminability(&rotated).unwrap();
        assert!((a.d_inter - b.d_inter).abs() < 1e-12);
        assert!((a.d_intra - b.d_intra).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(d_inter(&[vec![vec![1.0, 0.0]]]).is_err()); // one class
        assert!(d_intra(&[vec![]]).is_err()); // empty class
        // Zero-norm feature cannot be normalized.
        assert!(d_intra(&[vec![vec![0.0, 0.0]]]).is_err());
    }

    #[test]
    fn group_by_class_partitions_rows() {
        let features =
            Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]).unwrap();
        let grouped = group_by_class(&features, &[1, 0, 1]).unwrap();
        assert_eq!(grouped.len(), 2);
        assert_eq!(grouped[0], vec![vec![0.0, 1.0]]);
        assert_eq!(grouped[1], vec![vec![1.0, 0.0], vec![0.5, 0.5]]);
        assert!(group_by_class(&features, &[0, 1]).is_err());
    }
}

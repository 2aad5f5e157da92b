//! Pixel-level classification metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no pixels to score (empty input or empty field of view)")]
    Empty,
    #[error("threshold must lie strictly inside (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("prediction/target/fov lengths disagree: {0}")]
    LengthMismatch(String),
}

/// Confusion counts and derived rates. Rates whose denominator is zero are
/// absent rather than silently zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub acc: f64,
    pub se: Option<f64>,
    pub sp: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
}

impl Metrics {
    /// All-zero metrics, used to flag diverged candidates.
    pub fn zeroed() -> Self {
        Metrics::default()
    }

    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let total = tp + fp + tn + fn_;
        Metrics {
            tp,
            fp,
            tn,
            fn_,
            acc: if total == 0 { 0.0 } else { (tp + tn) as f64 / total as f64 },
            se: (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64),
            sp: (tn + fp > 0).then(|| tn as f64 / (tn + fp) as f64),
            f1: (2 * tp + fp + fn_ > 0).then(|| 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64),
            auc: None,
        }
    }
}

fn check_lengths(
    pred: usize,
    target: usize,
    fov: Option<usize>,
) -> std::result::Result<(), MetricsError> {
    if pred != target || fov.is_some_and(|f| f != pred) {
        return Err(MetricsError::LengthMismatch(format!(
            "{} predictions, {} targets, {:?} fov",
            pred, target, fov
        )));
    }
    Ok(())
}

/// Threshold predictions at `threshold` (predicted positive when
/// `pred >= threshold`), count the confusion matrix over pixels inside the
/// field of view, and derive ACC/SE/SP/F1. AUC is computed separately.
pub fn confusion_and_metrics<T: Scalar>(
    pred: &[T],
    target: &[bool],
    fov: Option<&[bool]>,
    threshold: f64,
) -> std::result::Result<Metrics, MetricsError> {
    if !(0.0..=1.0).contains(&threshold) || threshold == 0.0 || threshold == 1.0 {
        return Err(MetricsError::BadThreshold(threshold));
    }
    check_lengths(pred.len(), target.len(), fov.map(<[bool]>::len))?;
    let thr = T::c(threshold);
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    let mut seen = false;
    for i in 0..pred.len() {
        if fov.is_some_and(|f| !f[i]) {
            continue;
        }
        seen = true;
        match (pred[i] >= thr, target[i]) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    if !seen {
        return Err(MetricsError::Empty);
    }
    Ok(Metrics::from_counts(tp, fp, tn, fn_))
}

/// Area under the ROC curve via midpoint ranks, equal to the normalized
/// Mann-Whitney U statistic. Requires both classes inside the fov.
pub fn auc<T: Scalar>(
    scores: &[T],
    labels: &[bool],
    fov: Option<&[bool]>,
) -> std::result::Result<f64, MetricsError> {
    check_lengths(scores.len(), labels.len(), fov.map(<[bool]>::len))?;
    let mut pairs: Vec<(f64, bool)> = Vec::new();
    for i in 0..scores.len() {
        if fov.is_some_and(|f| !f[i]) {
            continue;
        }
        pairs.push((scores[i].as_f64(), labels[i]));
    }
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let npos = pairs.iter().filter(|(_, l)| *l).count();
    let nneg = pairs.len() - npos;
    if npos == 0 || nneg == 0 {
        return Err(MetricsError::SingleClass);
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // midpoint ranks over tie groups
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        let mid_rank = (i + 1 + j) as f64 / 2.0; // average of ranks i+1..=j
        for p in &pairs[i..j] {
            if p.1 {
                rank_sum_pos += mid_rank;
            }
        }
        i = j;
    }
    let npos_f = npos as f64;
    Ok((rank_sum_pos - npos_f * (npos_f + 1.0) / 2.0) / (npos_f * nneg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng as _;

    #[test]
    fn perfect_prediction_gives_ones() {
        let pred = vec![0.9f64, 0.1, 0.8, 0.2];
        let target = vec![true, false, true, false];
        let m = confusion_and_metrics(&pred, &target, None, 0.5).unwrap();
        assert_eq!((m.acc, m.se, m.sp, m.f1), (1.0, Some(1.0), Some(1.0), Some(1.0)));
    }

    #[test]
    fn hand_counted_example() {
        // tp=8, fp=2, fn=2, tn=88 -> f1=0.8, acc=0.96
        let m = Metrics::from_counts(8, 2, 88, 2);
        assert_eq!(m.f1, Some(0.8));
        assert_eq!(m.acc, 0.96);
        assert_eq!(m.se, Some(0.8));
        assert_eq!(m.sp, Some(88.0 / 90.0));
    }

    #[test]
    fn all_negative_prediction() {
        let pred = vec![0.1f64; 4];
        let target = vec![true, false, true, false];
        let m = confusion_and_metrics(&pred, &target, None, 0.5).unwrap();
        assert_eq!(m.se, Some(0.0));
        assert_eq!(m.sp, Some(1.0));
    }

    #[test]
    fn no_positive_pixels_flags_se() {
        let pred = vec![0.1f64, 0.9];
        let target = vec![false, false];
        let m = confusion_and_metrics(&pred, &target, None, 0.5).unwrap();
        assert_eq!(m.se, None);
    }

    #[test]
    fn fov_excludes_pixels() {
        let pred = vec![0.9f64, 0.9];
        let target = vec![true, false];
        let fov = vec![true, false];
        let m = confusion_and_metrics(&pred, &target, Some(&fov), 0.5).unwrap();
        assert_eq!((m.tp, m.fp), (1, 0));
    }

    #[test]
    fn metric_identities_hold_exactly() {
        let mut rng = rng_for(15, "ids");
        for _ in 0..50 {
            let tp = rng.random_range(0..50u64);
            let fp = rng.random_range(0..50u64);
            let tn = rng.random_range(1..50u64);
            let fn_ = rng.random_range(0..50u64);
            let m = Metrics::from_counts(tp, fp, tn, fn_);
            assert_eq!(m.acc, (tp + tn) as f64 / (tp + tn + fp + fn_) as f64);
            if tp + fn_ > 0 {
                assert_eq!(m.se, Some(tp as f64 / (tp + fn_) as f64));
            }
            assert_eq!(m.sp, Some(tn as f64 / (tn + fp) as f64));
            if 2 * tp + fp + fn_ > 0 {
                assert_eq!(m.f1, Some(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64));
            }
        }
    }

    #[test]
    fn auc_perfectly_separated_is_one() {
        let scores = vec![0.9f64, 0.8, 0.2, 0.1];
        let labels = vec![true, true, false, false];
        assert_eq!(auc(&scores, &labels, None).unwrap(), 1.0);
    }

    #[test]
    fn auc_constant_scores_is_half() {
        let scores = vec![0.5f64; 6];
        let labels = vec![true, false, true, false, true, false];
        assert!((auc(&scores, &labels, None).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn auc_single_class_is_error() {
        let scores = vec![0.5f64, 0.6];
        assert!(matches!(auc(&scores, &[true, true], None), Err(MetricsError::SingleClass)));
    }

    /// O(n^2) pairwise comparison oracle: fraction of (pos, neg) pairs the
    /// positive outranks, ties counting half.
    fn auc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0f64;
        let mut total = 0.0f64;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                total += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / total
    }

    #[test]
    fn auc_matches_pairwise_oracle() {
        let mut rng = rng_for(13, "auc");
        // 200 random pixels with deliberate ties from score quantization
        let scores: Vec<f64> =
            (0..200).map(|_| (rng.random_range(0.0..1.0f64) * 20.0).round() / 20.0).collect();
        let labels: Vec<bool> = (0..200).map(|_| rng.random::<f64>() < 0.3).collect();
        let fast = auc(&scores, &labels, None).unwrap();
        let slow = auc_pairwise(&scores, &labels);
        assert!((fast - slow).abs() < 1e-9, "{} vs {}", fast, slow);
    }
}

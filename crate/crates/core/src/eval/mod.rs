//! Discrimination metrics and risk-tier summaries.
//!
//! Ties are first-class everywhere: ROC-AUC is the Mann-Whitney statistic
//! with ties counted 1/2, PR-AUC is average precision with equal-score
//! groups collapsed (constant scores give exactly the prevalence), and the
//! tier cut at fraction P flags exactly round(P*n) patients with ties at
//! the threshold broken by ascending patient id.

pub mod bootstrap;
pub mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scores and labels have different lengths ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("empty input")]
    Empty,
    #[error("labels are degenerate: need at least one positive and one negative")]
    DegenerateLabels,
    #[error("score at index {0} is not finite")]
    NonFiniteScore(usize),
    #[error("tier fraction {0} is outside (0, 1]")]
    BadFraction(f64),
    #[error("tier fraction {fraction} flags zero of {n} patients")]
    EmptyTier { fraction: f64, n: usize },
    #[error("bootstrap needs at least one iteration")]
    NoIterations,
    #[error("duplicate patient id {0:?}")]
    DuplicateId(String),
    #[error("io: {0}")]
    Io(String),
}

fn validate(scores: &[f64], labels: &[bool]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(EvalError::DegenerateLabels);
    }
    Ok(())
}

/// Mann-Whitney ROC-AUC with ties counted 1/2, via average ranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    validate(scores, labels)?;
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j averaged over the tie group
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let npos = labels.iter().filter(|&&l| l).count() as f64;
    let nneg = n as f64 - npos;
    let u = rank_sum_pos - npos * (npos + 1.0) / 2.0;
    Ok(u / (npos * nneg))
}

/// Average precision with equal-score groups collapsed.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    validate(scores, labels)?;
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let total_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut cum_tp = 0.0f64;
    let mut cum_n = 0.0f64;
    let mut ap = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        let mut group_tp = 0.0f64;
        while j < n && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                group_tp += 1.0;
            }
            j += 1;
        }
        cum_tp += group_tp;
        cum_n += (j - i) as f64;
        ap += (group_tp / total_pos) * (cum_tp / cum_n);
        i = j;
    }
    Ok(ap)
}

/// One scored, labeled patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPatient {
    pub patient_id: String,
    pub score: f64,
    pub label: bool,
}

/// Metrics at one flag fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierMetrics {
    pub fraction: f64,
    /// round(fraction * n), the exact number of flagged patients.
    pub flagged: usize,
    /// Lowest score inside the flag set.
    pub threshold: f64,
    pub true_positives: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    pub ppv: f64,
    /// Observed-to-expected enrichment: ppv / prevalence. Equals
    /// sensitivity / fraction whenever fraction * n is an integer.
    pub oe_ratio: f64,
    pub prevalence: f64,
}

/// Number of patients flagged at fraction `p`: round half away from zero.
pub fn tier_size(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}

/// Sorts indices for tier flagging: score descending, patient id ascending
/// among ties.
fn tier_order(scored: &[ScoredPatient]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        scored[b]
            .score
            .total_cmp(&scored[a].score)
            .then_with(|| scored[a].patient_id.cmp(&scored[b].patient_id))
    });
    order
}

/// Computes flag-set metrics at one fraction.
pub fn tier_metrics(scored: &[ScoredPatient], fraction: f64) -> Result<TierMetrics, EvalError> {
    let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    let labels: Vec<bool> = scored.iter().map(|s| s.label).collect();
    validate(&scores, &labels)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EvalError::BadFraction(fraction));
    }
    let order = tier_order(scored);
    tier_from_order(&scores, &labels, &order, fraction)
}

/// Tier metrics given a precomputed flag order (score desc, tie-broken).
fn tier_from_order(
    scores: &[f64],
    labels: &[bool],
    order: &[usize],
    fraction: f64,
) -> Result<TierMetrics, EvalError> {
    let n = scores.len();
    let m = tier_size(fraction, n);
    if m == 0 {
        return Err(EvalError::EmptyTier { fraction, n });
    }
    let m = m.min(n);
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = n - pos;
    let tp = order[..m].iter().filter(|&&i| labels[i]).count();
    let fp = m - tp;
    let tn = neg - fp;
    let prevalence = pos as f64 / n as f64;
    let ppv = tp as f64 / m as f64;
    Ok(TierMetrics {
        fraction,
        flagged: m,
        threshold: scores[order[m - 1]],
        true_positives: tp,
        sensitivity: tp as f64 / pos as f64,
        specificity: tn as f64 / neg as f64,
        ppv,
        oe_ratio: ppv / prevalence,
        prevalence,
    })
}

/// ROC curve points (fpr, tpr), one per distinct threshold, endpoints
/// included.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>, EvalError> {
    validate(scores, labels)?;
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = n as f64 - pos;
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0f64, 0.0f64);
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            j += 1;
        }
        points.push((fp / neg, tp / pos));
        i = j;
    }
    Ok(points)
}

/// PR curve points (recall, precision), one per distinct threshold.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>, EvalError> {
    validate(scores, labels)?;
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut points = Vec::new();
    let (mut tp, mut seen) = (0.0f64, 0.0f64);
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                tp += 1.0;
            }
            seen += 1.0;
            j += 1;
        }
        points.push((tp / pos, tp / seen));
        i = j;
    }
    Ok(points)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    /// Pairwise brute-force ROC-AUC: P(score_pos > score_neg) + 1/2 ties.
    pub(crate) fn oracle_roc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0f64;
        let mut pairs = 0.0f64;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    /// Average precision by explicit threshold sweep over distinct scores,
    /// computed straight from the definition.
    pub(crate) fn oracle_pr(scores: &[f64], labels: &[bool]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let total_pos = labels.iter().filter(|&&l| l).count() as f64;
        let mut ap = 0.0;
        let mut prev_tp = 0.0;
        for &t in &thresholds {
            let flagged: Vec<usize> =
                (0..scores.len()).filter(|&i| scores[i] >= t).collect();
            let tp = flagged.iter().filter(|&&i| labels[i]).count() as f64;
            let precision = tp / flagged.len() as f64;
            ap += (tp - prev_tp) / total_pos * precision;
            prev_tp = tp;
        }
        ap
    }

    #[test]
    fn known_values() {
        // perfect ranking
        let s = [0.9, 0.8, 0.2, 0.1];
        let l = [true, true, false, false];
        assert_abs_diff_eq!(roc_auc(&s, &l).unwrap(), 1.0);
        assert_abs_diff_eq!(pr_auc(&s, &l).unwrap(), 1.0);
        // anti-perfect
        let l_rev = [false, false, true, true];
        assert_abs_diff_eq!(roc_auc(&s, &l_rev).unwrap(), 0.0);
        // constant scores: ROC 1/2, PR = prevalence
        let s_const = [0.5, 0.5, 0.5, 0.5];
        assert_abs_diff_eq!(roc_auc(&s_const, &l).unwrap(), 0.5);
        assert_abs_diff_eq!(pr_auc(&s_const, &l).unwrap(), 0.5);
        let l3 = [true, false, false, false];
        assert_abs_diff_eq!(pr_auc(&s_const, &l3).unwrap(), 0.25);
    }

    #[test]
    fn agrees_with_oracles_on_random_instances() {
        let mut rng = crate::rng::substream(11, crate::rng::Stream::Sim, 0);
        for case in 0..1000 {
            let n = rng.gen_range(2..=12);
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    // coarse lattice forces heavy ties
                    (rng.gen_range(0..5) as f64) / 4.0
                })
                .collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            if labels.iter().all(|&l| l) {
                labels[0] = false;
            }
            if labels.iter().all(|&l| !l) {
                labels[0] = true;
            }
            let roc = roc_auc(&scores, &labels).unwrap();
            let pr = pr_auc(&scores, &labels).unwrap();
            assert!(
                (roc - oracle_roc(&scores, &labels)).abs() < 1e-12,
                "case {case}: roc {roc} vs oracle {}",
                oracle_roc(&scores, &labels)
            );
            assert!(
                (pr - oracle_pr(&scores, &labels)).abs() < 1e-12,
                "case {case}: pr {pr} vs oracle {}",
                oracle_pr(&scores, &labels)
            );
        }
    }

    proptest! {
        #[test]
        fn roc_matches_oracle(case in proptest::collection::vec((0u8..6, any::<bool>()), 2..12)) {
            let scores: Vec<f64> = case.iter().map(|&(s, _)| s as f64 / 5.0).collect();
            let mut labels: Vec<bool> = case.iter().map(|&(_, l)| l).collect();
            if labels.iter().all(|&l| l) { labels[0] = false; }
            if labels.iter().all(|&l| !l) { labels[0] = true; }
            let got = roc_auc(&scores, &labels).unwrap();
            prop_assert!((got - oracle_roc(&scores, &labels)).abs() < 1e-12);
            let got = pr_auc(&scores, &labels).unwrap();
            prop_assert!((got - oracle_pr(&scores, &labels)).abs() < 1e-12);
        }
    }

    fn scored(scores: &[f64], labels: &[bool]) -> Vec<ScoredPatient> {
        scores
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&score, &label))| ScoredPatient {
                patient_id: format!("P{i:04}"),
                score,
                label,
            })
            .collect()
    }

    #[test]
    fn tier_counts_and_threshold() {
        let s = scored(&[0.9, 0.7, 0.7, 0.3, 0.1], &[true, false, true, false, true]);
        // 40% of 5 = 2 flagged; tie at 0.7 broken by id: P0001 before P0002
        let t = tier_metrics(&s, 0.4).unwrap();
        assert_eq!(t.flagged, 2);
        assert_eq!(t.true_positives, 1);
        assert_abs_diff_eq!(t.threshold, 0.7);
        assert_abs_diff_eq!(t.sensitivity, 1.0 / 3.0);
        assert_abs_diff_eq!(t.ppv, 0.5);
        assert_abs_diff_eq!(t.specificity, 0.5);
        assert_abs_diff_eq!(t.oe_ratio, 0.5 / 0.6);
    }

    #[test]
    fn tier_tie_break_is_stable_by_id() {
        // equal scores everywhere: the flag set is the lexicographically
        // first ids
        let s = scored(&[0.5; 4], &[false, true, false, true]);
        let t = tier_metrics(&s, 0.5).unwrap();
        assert_eq!(t.flagged, 2);
        // P0000 and P0001 flagged: one positive
        assert_eq!(t.true_positives, 1);
    }

    #[test]
    fn oe_equals_sensitivity_over_fraction_at_exact_tiers() {
        let mut rng = crate::rng::substream(13, crate::rng::Stream::Sim, 1);
        for _ in 0..200 {
            let n = 200usize;
            let scores: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
            if labels.iter().all(|&l| l) {
                labels[0] = false;
            }
            if labels.iter().all(|&l| !l) {
                labels[0] = true;
            }
            let s = scored(&scores, &labels);
            for fraction in [0.05, 0.1, 0.25, 0.5] {
                // fraction * 200 is integral, so the identity is exact
                let t = tier_metrics(&s, fraction).unwrap();
                assert!(
                    (t.oe_ratio - t.sensitivity / fraction).abs() < 1e-12,
                    "oe {} vs sens/P {}",
                    t.oe_ratio,
                    t.sensitivity / fraction
                );
            }
        }
    }

    #[test]
    fn empty_tier_is_an_error() {
        let s = scored(&[0.9, 0.1], &[true, false]);
        assert!(matches!(
            tier_metrics(&s, 0.01),
            Err(EvalError::EmptyTier { .. })
        ));
    }

    #[test]
    fn degenerate_labels_are_errors() {
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(EvalError::DegenerateLabels)
        ));
        assert!(matches!(
            pr_auc(&[0.1, 0.2], &[false, false]),
            Err(EvalError::DegenerateLabels)
        ));
        assert!(matches!(
            roc_auc(&[0.1, f64::NAN], &[true, false]),
            Err(EvalError::NonFiniteScore(1))
        ));
    }

    #[test]
    fn curves_bracket_auc() {
        let mut rng = crate::rng::substream(17, crate::rng::Stream::Sim, 2);
        let scores: Vec<f64> = (0..50).map(|_| rng.gen_range(0..8) as f64).collect();
        let labels: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
        let points = roc_curve(&scores, &labels).unwrap();
        // trapezoid over the curve equals the Mann-Whitney value
        let mut area = 0.0;
        for w in points.windows(2) {
            area += (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0;
        }
        assert_abs_diff_eq!(area, roc_auc(&scores, &labels).unwrap(), epsilon = 1e-12);
        let pr_points = pr_curve(&scores, &labels).unwrap();
        assert!(pr_points.iter().all(|&(r, p)| (0.0..=1.0).contains(&r) && (0.0..=1.0).contains(&p)));
        assert_abs_diff_eq!(pr_points.last().unwrap().0, 1.0);
    }
}

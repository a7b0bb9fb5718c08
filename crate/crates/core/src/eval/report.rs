//! Full evaluation reports: AUCs and tier metrics with joint bootstrap CIs.
//!
//! One stratified resample per replicate drives every interval in the
//! report, so tier CIs and AUC CIs are computed on identical replicates.

use crate::eval::bootstrap::{percentile_ci, CiValue};
use crate::eval::{pr_auc, roc_auc, tier_size, EvalError, ScoredPatient, TierMetrics};
use crate::par;
use crate::rng::{substream, Stream};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;

/// Flag fractions reported by default.
pub const DEFAULT_TIER_FRACTIONS: [f64; 7] = [0.005, 0.01, 0.05, 0.10, 0.25, 0.50, 0.75];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierReport {
    pub fraction: f64,
    pub flagged: usize,
    pub threshold: f64,
    pub prevalence: f64,
    pub sensitivity: CiValue,
    pub specificity: CiValue,
    pub ppv: CiValue,
    pub oe_ratio: CiValue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Where the scores came from (model description or external name).
    pub provenance: String,
    pub window_months: Option<u32>,
    pub n: usize,
    pub events: usize,
    pub roc_auc: CiValue,
    pub pr_auc: CiValue,
    pub tiers: Vec<TierReport>,
    pub bootstrap_iterations: usize,
    pub bootstrap_seed: u64,
}

/// Computes the report for one scored cohort.
pub fn evaluate(
    scored: &[ScoredPatient],
    fractions: &[f64],
    iterations: usize,
    seed: u64,
    provenance: &str,
    window_months: Option<u32>,
) -> Result<MetricReport, EvalError> {
    if iterations == 0 {
        return Err(EvalError::NoIterations);
    }
    let mut seen = HashSet::new();
    for s in scored {
        if !seen.insert(s.patient_id.as_str()) {
            return Err(EvalError::DuplicateId(s.patient_id.clone()));
        }
    }
    let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    let labels: Vec<bool> = scored.iter().map(|s| s.label).collect();

    // point estimates use real patient ids for the tier tie-break
    let point_roc = roc_auc(&scores, &labels)?;
    let point_pr = pr_auc(&scores, &labels)?;
    let point_tiers: Vec<TierMetrics> = fractions
        .iter()
        .map(|&f| crate::eval::tier_metrics(scored, f))
        .collect::<Result<_, _>>()?;

    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(EvalError::DegenerateLabels);
    }
    let n = scored.len();
    let stats_per_replicate = 2 + 4 * fractions.len();
    let fractions_owned: Vec<f64> = fractions.to_vec();
    let rows: Vec<Vec<f64>> = par::map_indexed(iterations, |r| {
        let mut rng = substream(seed, Stream::Bootstrap, r as u64);
        // resample: positives occupy the front, which also fixes the
        // replicate tie-break (buffer position)
        let mut s = Vec::with_capacity(n);
        for _ in 0..pos.len() {
            s.push(scores[pos[rng.gen_range(0..pos.len())]]);
        }
        for _ in 0..neg.len() {
            s.push(scores[neg[rng.gen_range(0..neg.len())]]);
        }
        let mut l = vec![true; pos.len()];
        l.extend(std::iter::repeat(false).take(neg.len()));
        replicate_stats(&s, &l, &fractions_owned)
    });

    let column = |c: usize| -> Vec<f64> { rows.iter().map(|row| row[c]).collect() };
    let ci = |c: usize, value: f64| -> CiValue {
        let (lower, upper) = percentile_ci(column(c));
        CiValue { value, lower, upper }
    };
    debug_assert!(rows.iter().all(|r| r.len() == stats_per_replicate));

    let tiers = point_tiers
        .iter()
        .enumerate()
        .map(|(t, point)| TierReport {
            fraction: point.fraction,
            flagged: point.flagged,
            threshold: point.threshold,
            prevalence: point.prevalence,
            sensitivity: ci(2 + 4 * t, point.sensitivity),
            specificity: ci(3 + 4 * t, point.specificity),
            ppv: ci(4 + 4 * t, point.ppv),
            oe_ratio: ci(5 + 4 * t, point.oe_ratio),
        })
        .collect();

    Ok(MetricReport {
        provenance: provenance.to_string(),
        window_months,
        n,
        events: pos.len(),
        roc_auc: ci(0, point_roc),
        pr_auc: ci(1, point_pr),
        tiers,
        bootstrap_iterations: iterations,
        bootstrap_seed: seed,
    })
}

/// roc, pr, then (sensitivity, specificity, ppv, oe) per fraction, from one
/// sorted pass over a replicate.
fn replicate_stats(scores: &[f64], labels: &[bool], fractions: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| {
        scores[b].total_cmp(&scores[a]).then_with(|| a.cmp(&b))
    });
    let pos_total = labels.iter().filter(|&&l| l).count();
    let neg_total = n - pos_total;
    // prefix positives over the descending order
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0usize);
    for &i in &order {
        prefix.push(prefix.last().unwrap() + usize::from(labels[i]));
    }
    // roc via grouped scan, pr via average precision on the same order
    let (mut u, mut neg_below_rev) = (0.0f64, 0.0f64);
    let mut ap = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group_tp = (prefix[j] - prefix[i]) as f64;
        let group_n = (j - i) as f64;
        ap += group_tp / pos_total as f64 * (prefix[j] as f64 / j as f64);
        // descending order: negatives strictly below come later; count via
        // totals minus seen
        let neg_seen_through_j = j as f64 - prefix[j] as f64;
        let group_neg = group_n - group_tp;
        let neg_strictly_below = neg_total as f64 - neg_seen_through_j;
        u += group_tp * (neg_strictly_below + group_neg / 2.0);
        neg_below_rev += group_neg;
        i = j;
    }
    let _ = neg_below_rev;
    let roc = u / (pos_total as f64 * neg_total as f64);

    let prevalence = pos_total as f64 / n as f64;
    let mut out = Vec::with_capacity(2 + 4 * fractions.len());
    out.push(roc);
    out.push(ap);
    for &fraction in fractions {
        let m = tier_size(fraction, n).clamp(1, n);
        let tp = prefix[m];
        let fp = m - tp;
        let tn = neg_total - fp;
        let sens = tp as f64 / pos_total as f64;
        let spec = tn as f64 / neg_total as f64;
        let ppv = tp as f64 / m as f64;
        out.push(sens);
        out.push(spec);
        out.push(ppv);
        out.push(ppv / prevalence);
    }
    out
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Aligned text table; percentages for the tier block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let pct = |v: f64| format!("{:.2}", v * 100.0);
        out.push_str(&format!("scores: {}\n", self.provenance));
        if let Some(w) = self.window_months {
            out.push_str(&format!("window: {w} months\n"));
        }
        out.push_str(&format!(
            "n: {}   events: {}   prevalence: {}%\n",
            self.n,
            self.events,
            pct(self.events as f64 / self.n as f64)
        ));
        out.push_str(&format!(
            "roc_auc: {:.4} ({:.4}, {:.4})\n",
            self.roc_auc.value, self.roc_auc.lower, self.roc_auc.upper
        ));
        out.push_str(&format!(
            "pr_auc:  {:.4} ({:.4}, {:.4})\n",
            self.pr_auc.value, self.pr_auc.lower, self.pr_auc.upper
        ));
        out.push_str(&format!(
            "bootstrap: {} iterations, seed {}\n\n",
            self.bootstrap_iterations, self.bootstrap_seed
        ));
        out.push_str(&format!(
            "{:>8} {:>8} {:>10} {:>22} {:>22} {:>22} {:>22}\n",
            "tier", "flagged", "threshold", "sensitivity%", "specificity%", "ppv%", "o/e"
        ));
        for t in &self.tiers {
            let fmt_pct = |c: &CiValue| {
                format!("{} ({}, {})", pct(c.value), pct(c.lower), pct(c.upper))
            };
            let fmt_raw = |c: &CiValue| {
                format!("{:.2} ({:.2}, {:.2})", c.value, c.lower, c.upper)
            };
            out.push_str(&format!(
                "{:>7}% {:>8} {:>10.4} {:>22} {:>22} {:>22} {:>22}\n",
                t.fraction * 100.0,
                t.flagged,
                t.threshold,
                fmt_pct(&t.sensitivity),
                fmt_pct(&t.specificity),
                fmt_pct(&t.ppv),
                fmt_raw(&t.oe_ratio),
            ));
        }
        out
    }
}

/// Writes ROC curve points as CSV (fpr, tpr).
pub fn write_roc_curve_csv<W: Write>(
    scores: &[f64],
    labels: &[bool],
    writer: W,
) -> Result<(), EvalError> {
    let points = crate::eval::roc_curve(scores, labels)?;
    write_curve(writer, "fpr,tpr", &points)
}

/// Writes PR curve points as CSV (recall, precision).
pub fn write_pr_curve_csv<W: Write>(
    scores: &[f64],
    labels: &[bool],
    writer: W,
) -> Result<(), EvalError> {
    let points = crate::eval::pr_curve(scores, labels)?;
    write_curve(writer, "recall,precision", &points)
}

fn write_curve<W: Write>(mut writer: W, header: &str, points: &[(f64, f64)]) -> Result<(), EvalError> {
    let io_err = EvalError::from_io;
    writeln!(writer, "{header}").map_err(io_err)?;
    for (x, y) in points {
        writeln!(writer, "{x},{y}").map_err(io_err)?;
    }
    Ok(())
}

impl EvalError {
    fn from_io(e: std::io::Error) -> Self {
        EvalError::Io(e.to_string())
    }
}

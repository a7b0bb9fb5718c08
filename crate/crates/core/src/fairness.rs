//! Subgroup performance, reliability flags, heterogeneity tests, and
//! gap/worst-group summaries.
//!
//! The heterogeneity test is a logistic recalibration comparison: the null
//! model regresses the outcome on (intercept, logit score) pooled across
//! levels; the alternative refits both parameters per level. The statistic
//! is 2(l_alt - l_null) against chi-square with 2(k-1) degrees of freedom.
//! Levels whose fit separates (or that contain a single class) are merged
//! into a synthetic "other" level and listed in the result.

use crate::eval::bootstrap::{bootstrap_ci, CiValue};
use crate::eval::{pr_auc, EvalError, ScoredPatient};
use crate::rng::derive_seed;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FairnessError {
    #[error("grouping assignment is empty")]
    EmptyGrouping,
    #[error("assignment covers {assigned} patients but {scored} were scored")]
    AssignmentMismatch { assigned: usize, scored: usize },
    #[error("need at least two usable levels, found {0}")]
    TooFewLevels(usize),
    #[error("pooled model separated; scores are degenerate for this test")]
    PooledSeparation,
    #[error("no reliable levels to summarize")]
    NoReliableLevels,
    #[error("results mix groupings")]
    MixedGroupings,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Race,
    AgeBand,
    Ethnicity,
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grouping::Race => "race",
            Grouping::AgeBand => "age_band",
            Grouping::Ethnicity => "ethnicity",
        })
    }
}

pub const RELIABLE_MIN_EVENTS: usize = 20;
pub const RELIABLE_MIN_NONEVENTS: usize = 20;
pub const RELIABLE_MAX_CI_WIDTH: f64 = 0.12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupResult {
    pub grouping: Grouping,
    pub level: String,
    pub n: usize,
    pub events: usize,
    /// None when the level lacks one of the classes.
    pub pr_auc: Option<f64>,
    pub ci: Option<CiValue>,
    pub reliable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityTest {
    pub grouping: Grouping,
    pub lrt_statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Filled once all groupings in a report are adjusted together.
    pub q_fdr: Option<f64>,
    /// Levels folded into "other" because their fit separated.
    pub merged_levels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessSummary {
    pub grouping: Grouping,
    pub max_gap: f64,
    pub worst_group: f64,
}

fn is_reliable(events: usize, n: usize, ci: &CiValue) -> bool {
    events >= RELIABLE_MIN_EVENTS
        && n - events >= RELIABLE_MIN_NONEVENTS
        && ci.upper - ci.lower <= RELIABLE_MAX_CI_WIDTH
}

fn level_indices(
    scored: &[ScoredPatient],
    levels: &[String],
) -> Result<BTreeMap<String, Vec<usize>>, FairnessError> {
    if levels.len() != scored.len() {
        return Err(FairnessError::AssignmentMismatch {
            assigned: levels.len(),
            scored: scored.len(),
        });
    }
    if scored.is_empty() {
        return Err(FairnessError::EmptyGrouping);
    }
    let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, level) in levels.iter().enumerate() {
        map.entry(level.clone()).or_default().push(i);
    }
    Ok(map)
}

/// Per-level PR-AUC with stratified bootstrap CIs and reliability flags.
/// `levels[i]` is the level of `scored[i]`; "unknown" is an ordinary level.
pub fn subgroup_metrics(
    scored: &[ScoredPatient],
    grouping: Grouping,
    levels: &[String],
    iterations: usize,
    seed: u64,
) -> Result<Vec<SubgroupResult>, FairnessError> {
    let by_level = level_indices(scored, levels)?;
    let mut out = Vec::with_capacity(by_level.len());
    for (level, idx) in &by_level {
        let n = idx.len();
        let events = idx.iter().filter(|&&i| scored[i].label).count();
        let (pr, ci, reliable) = if events == 0 || events == n {
            (None, None, false)
        } else {
            let s: Vec<f64> = idx.iter().map(|&i| scored[i].score).collect();
            let l: Vec<bool> = idx.iter().map(|&i| scored[i].label).collect();
            let level_seed = derive_seed(seed, &format!("subgroup/{grouping}/{level}"));
            let ci = bootstrap_ci(&s, &l, |s, l| pr_auc(s, l), iterations, level_seed)?;
            let reliable = is_reliable(events, n, &ci);
            (Some(ci.value), Some(ci), reliable)
        };
        out.push(SubgroupResult {
            grouping,
            level: level.clone(),
            n,
            events,
            pr_auc: pr,
            ci,
            reliable,
        });
    }
    Ok(out)
}

const SCORE_CLIP: f64 = 1e-6;
const COEF_SEPARATION_BOUND: f64 = 30.0;

fn logit_clipped(score: f64) -> f64 {
    let p = score.clamp(SCORE_CLIP, 1.0 - SCORE_CLIP);
    (p / (1.0 - p)).ln()
}

fn log1pexp(z: f64) -> f64 {
    if z > 35.0 {
        z
    } else if z < -35.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

fn loglik2(x: &[f64], y: &[bool], b0: f64, b1: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let t = b0 + b1 * xi;
            if yi {
                -log1pexp(-t)
            } else {
                -log1pexp(t)
            }
        })
        .sum()
}

struct Fit2 {
    loglik: f64,
}

/// Two-parameter logistic fit by damped Newton. `None` signals separation
/// or a degenerate design (single class, constant regressor): coefficients
/// escape the bound or the normal equations collapse.
fn fit_logistic2(x: &[f64], y: &[bool]) -> Option<Fit2> {
    let n = x.len();
    let events = y.iter().filter(|&&v| v).count();
    if events == 0 || events == n {
        return None;
    }
    let (mut b0, mut b1) = (0.0f64, 0.0f64);
    let mut ll = loglik2(x, y, b0, b1);
    for _ in 0..100 {
        let (mut g0, mut g1) = (0.0, 0.0);
        let (mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            let t = b0 + b1 * xi;
            let p = 1.0 / (1.0 + (-t).exp());
            let r = f64::from(yi) - p;
            let w = p * (1.0 - p);
            g0 += r;
            g1 += r * xi;
            h00 += w;
            h01 += w * xi;
            h11 += w * xi * xi;
        }
        if (g0.abs() + g1.abs()) / (n as f64) < 1e-11 {
            break;
        }
        let det = h00 * h11 - h01 * h01;
        if !(det > 1e-12 * (h00 * h11).max(f64::MIN_POSITIVE)) {
            return None;
        }
        let d0 = (h11 * g0 - h01 * g1) / det;
        let d1 = (h00 * g1 - h01 * g0) / det;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let (n0, n1) = (b0 + step * d0, b1 + step * d1);
            let nll = loglik2(x, y, n0, n1);
            if nll.is_finite() && nll > ll - 1e-12 {
                let done = (nll - ll).abs() < 1e-12 * (1.0 + ll.abs());
                b0 = n0;
                b1 = n1;
                ll = nll;
                accepted = true;
                if done {
                    return finish(b0, b1, ll);
                }
                break;
            }
            step /= 2.0;
        }
        if !accepted {
            break;
        }
        if b0.abs() > COEF_SEPARATION_BOUND || b1.abs() > COEF_SEPARATION_BOUND {
            return None;
        }
    }
    finish(b0, b1, ll)
}

fn finish(b0: f64, b1: f64, ll: f64) -> Option<Fit2> {
    if !b0.is_finite() || !b1.is_finite() || !ll.is_finite() {
        return None;
    }
    if b0.abs() > COEF_SEPARATION_BOUND || b1.abs() > COEF_SEPARATION_BOUND {
        return None;
    }
    Some(Fit2 { loglik: ll })
}

/// Likelihood-ratio heterogeneity test across levels. Levels whose own fit
/// separates are merged into "other" and refit together; if the merged
/// level still separates, its patients are excluded from both fits so the
/// null stays nested in the alternative over one shared sample.
pub fn lrt_heterogeneity(
    scored: &[ScoredPatient],
    grouping: Grouping,
    levels: &[String],
) -> Result<HeterogeneityTest, FairnessError> {
    let by_level = level_indices(scored, levels)?;
    let x: Vec<f64> = scored.iter().map(|s| logit_clipped(s.score)).collect();
    let y: Vec<bool> = scored.iter().map(|s| s.label).collect();

    let mut merged_levels = Vec::new();
    let mut merged_idx: Vec<usize> = Vec::new();
    let mut alt_loglik = 0.0;
    let mut k = 0usize;
    let mut fitted_idx: Vec<usize> = Vec::new();
    for (level, idx) in &by_level {
        let lx: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let ly: Vec<bool> = idx.iter().map(|&i| y[i]).collect();
        match fit_logistic2(&lx, &ly) {
            Some(fit) => {
                alt_loglik += fit.loglik;
                k += 1;
                fitted_idx.extend(idx);
            }
            None => {
                merged_levels.push(level.clone());
                merged_idx.extend(idx);
            }
        }
    }
    if !merged_idx.is_empty() {
        let lx: Vec<f64> = merged_idx.iter().map(|&i| x[i]).collect();
        let ly: Vec<bool> = merged_idx.iter().map(|&i| y[i]).collect();
        if let Some(fit) = fit_logistic2(&lx, &ly) {
            alt_loglik += fit.loglik;
            k += 1;
            fitted_idx.extend(&merged_idx);
        }
        // a merged level that still separates contributes to neither model
    }
    if k < 2 {
        return Err(FairnessError::TooFewLevels(k));
    }
    let nx: Vec<f64> = fitted_idx.iter().map(|&i| x[i]).collect();
    let ny: Vec<bool> = fitted_idx.iter().map(|&i| y[i]).collect();
    let null = fit_logistic2(&nx, &ny).ok_or(FairnessError::PooledSeparation)?;

    let statistic = (2.0 * (alt_loglik - null.loglik)).max(0.0);
    let df = 2 * (k - 1);
    let chi = ChiSquared::new(df as f64).expect("df >= 2");
    let p_value = chi.sf(statistic).clamp(0.0, 1.0);
    Ok(HeterogeneityTest {
        grouping,
        lrt_statistic: statistic,
        df,
        p_value,
        q_fdr: None,
        merged_levels,
    })
}

/// Benjamini-Hochberg step-up adjustment. Order is preserved: `q[i]`
/// belongs to `p[i]`. Inputs must lie in [0, 1].
pub fn bh_fdr(p: &[f64]) -> Vec<f64> {
    for &v in p {
        assert!(
            v.is_finite() && (0.0..=1.0).contains(&v),
            "p-value {v} outside [0, 1]"
        );
    }
    let m = p.len();
    if m == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut q = vec![0.0; m];
    let mut running = f64::INFINITY;
    for (rank0, &i) in order.iter().enumerate().rev() {
        let rank = rank0 + 1;
        // divide before scaling: the rank-m candidate stays exactly p and
        // the others keep a strict >= p margin
        let candidate = if rank == m {
            p[i]
        } else {
            p[i] / rank as f64 * m as f64
        };
        running = running.min(candidate).min(1.0);
        q[i] = running;
    }
    q
}

/// Gap and worst-group over reliable levels only.
pub fn fairness_summary(results: &[SubgroupResult]) -> Result<FairnessSummary, FairnessError> {
    let grouping = results.first().ok_or(FairnessError::EmptyGrouping)?.grouping;
    if results.iter().any(|r| r.grouping != grouping) {
        return Err(FairnessError::MixedGroupings);
    }
    let reliable: Vec<f64> = results
        .iter()
        .filter(|r| r.reliable)
        .filter_map(|r| r.pr_auc)
        .collect();
    if reliable.is_empty() {
        return Err(FairnessError::NoReliableLevels);
    }
    let max = reliable.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = reliable.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(FairnessSummary {
        grouping,
        max_gap: max - min,
        worst_group: min,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupingReport {
    pub grouping: Grouping,
    pub levels: Vec<SubgroupResult>,
    pub heterogeneity: HeterogeneityTest,
    /// None when no level meets the reliability bar.
    pub summary: Option<FairnessSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub provenance: String,
    pub bootstrap_iterations: usize,
    pub seed: u64,
    pub groupings: Vec<GroupingReport>,
}

/// Runs every grouping, then BH-adjusts the heterogeneity p-values jointly.
pub fn build_report(
    scored: &[ScoredPatient],
    assignments: &[(Grouping, Vec<String>)],
    iterations: usize,
    seed: u64,
    provenance: &str,
) -> Result<FairnessReport, FairnessError> {
    if assignments.is_empty() {
        return Err(FairnessError::EmptyGrouping);
    }
    let mut groupings = Vec::with_capacity(assignments.len());
    for (grouping, levels) in assignments {
        let results = subgroup_metrics(scored, *grouping, levels, iterations, seed)?;
        let heterogeneity = lrt_heterogeneity(scored, *grouping, levels)?;
        let summary = match fairness_summary(&results) {
            Ok(s) => Some(s),
            Err(FairnessError::NoReliableLevels) => None,
            Err(e) => return Err(e),
        };
        groupings.push(GroupingReport {
            grouping: *grouping,
            levels: results,
            heterogeneity,
            summary,
        });
    }
    let p: Vec<f64> = groupings.iter().map(|g| g.heterogeneity.p_value).collect();
    let q = bh_fdr(&p);
    for (g, qi) in groupings.iter_mut().zip(q) {
        g.heterogeneity.q_fdr = Some(qi);
    }
    Ok(FairnessReport {
        provenance: provenance.to_string(),
        bootstrap_iterations: iterations,
        seed,
        groupings,
    })
}

impl FairnessReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("scores: {}\n", self.provenance));
        out.push_str(&format!(
            "bootstrap: {} iterations, seed {}\n",
            self.bootstrap_iterations, self.seed
        ));
        for g in &self.groupings {
            out.push_str(&format!("\n[{}]\n", g.grouping));
            out.push_str(&format!(
                "{:<24} {:>9} {:>8} {:>26} {:>9}\n",
                "level", "n", "events", "pr_auc% (95% ci)", "reliable"
            ));
            for r in &g.levels {
                let metric = match (&r.pr_auc, &r.ci) {
                    (Some(_), Some(ci)) => format!(
                        "{:.2} ({:.2}, {:.2})",
                        ci.value * 100.0,
                        ci.lower * 100.0,
                        ci.upper * 100.0
                    ),
                    _ => "-".to_string(),
                };
                out.push_str(&format!(
                    "{:<24} {:>9} {:>8} {:>26} {:>9}\n",
                    r.level,
                    r.n,
                    r.events,
                    metric,
                    if r.reliable { "yes" } else { "no" }
                ));
            }
            match &g.summary {
                Some(s) => out.push_str(&format!(
                    "max_gap: {:.2}%   worst_group: {:.2}%\n",
                    s.max_gap * 100.0,
                    s.worst_group * 100.0
                )),
                None => out.push_str("max_gap: -   worst_group: - (no reliable levels)\n"),
            }
            let h = &g.heterogeneity;
            out.push_str(&format!(
                "heterogeneity: lrt {:.4}, df {}, p {:.4}, q_fdr {}\n",
                h.lrt_statistic,
                h.df,
                h.p_value,
                h.q_fdr.map_or("-".to_string(), |q| format!("{q:.4}"))
            ));
            if !h.merged_levels.is_empty() {
                out.push_str(&format!(
                    "merged into \"other\" (separated fits): {}\n",
                    h.merged_levels.join(", ")
                ));
            }
        }
        out
    }
}

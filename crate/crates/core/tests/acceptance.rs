//! Release acceptance: one test per numbered shipping criterion, each with
//! its tolerance and runtime bound stated inline. Oracles here are written
//! independently of the library (pairwise AUC counts, grid-plus-bisection
//! optima, hand-computed persistence tables) so a library regression cannot
//! hide behind a shared bug.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use cohortcast_core::catalog::Catalog;
use cohortcast_core::eval::bootstrap::bootstrap_ci_roc;
use cohortcast_core::eval::report::DEFAULT_TIER_FRACTIONS;
use cohortcast_core::eval::{pr_auc, roc_auc, tier_metrics, ScoredPatient};
use cohortcast_core::fairness::{
    bh_fdr, fairness_summary, lrt_heterogeneity, Grouping, SubgroupResult, RELIABLE_MAX_CI_WIDTH,
    RELIABLE_MIN_EVENTS, RELIABLE_MIN_NONEVENTS,
};
use cohortcast_core::par;
use cohortcast_core::pipeline::elastic_net::{objective, smooth_gradient, smooth_objective};
use cohortcast_core::pipeline::{
    downsample_train, run_ablation, split, train_elastic_net, HyperGrid, SplitLabel,
    StratifiedPatient,
};
use cohortcast_core::represent::prompt::render_prompt;
use cohortcast_core::represent::{
    build_vector, read_attributes_csv, PatientProfile, Representation, VectorLayout,
};
use cohortcast_core::rng::{derive_seed, substream, Stream};
use cohortcast_core::synth::{oracle_auc, CohortSpec, Generator};
use cohortcast_core::timeline::{
    aggregate, convert_timeout, group_by_patient, read_visits, write_matrix_csv, Granularity,
    IntervalGrid,
};
use chrono::NaiveDate;
use ndarray::Array2;
use rand::Rng;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn read(path: &str) -> String {
    let p = root().join(path);
    fs::read_to_string(&p).unwrap_or_else(|e| panic!("reading {}: {e}", p.display()))
}

fn toy_catalog() -> Catalog {
    Catalog::load(&root().join("catalog/toy.catalog")).expect("toy catalog parses")
}

// ---------------------------------------------------------------- 1 ----

/// Criterion 1: the toy patient flows through all five stages and every
/// intermediate artifact is byte-identical to the golden files, in < 1 s.
#[test]
fn criterion_01_toy_golden_stages() {
    let t0 = Instant::now();
    let catalog = toy_catalog();

    // stage 1: parse inputs
    let visits = read_visits(&root().join("fixtures/toy/visits.tsv")).expect("visits parse");
    let mut grouped = group_by_patient(visits);
    assert_eq!(grouped.len(), 1, "toy corpus holds exactly one patient");
    let (patient_id, visits) = grouped.remove(0);
    assert_eq!(patient_id, "001");
    let attrs = read_attributes_csv(read("fixtures/toy/attributes.csv").as_bytes())
        .expect("attributes parse")
        .remove("001")
        .expect("patient 001 has attributes");

    // stage 2: interval aggregation
    let grid = IntervalGrid::new(
        NaiveDate::from_ymd_opt(2016, 1, 1).unwrap(),
        Granularity::HalfYear,
    )
    .unwrap();
    let raw = aggregate(&catalog, &patient_id, &visits, grid).expect("aggregation");
    let mut buf = Vec::new();
    write_matrix_csv(&catalog, &raw, &mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        read("fixtures/toy/raw_matrix.csv"),
        "stage 2 raw activity table"
    );

    // stage 3: persistence fill
    let profile = PatientProfile::assemble(&catalog, attrs, raw).expect("profile assembly");
    let mut buf = Vec::new();
    write_matrix_csv(&catalog, &profile.filled, &mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        read("fixtures/toy/filled_matrix.csv"),
        "stage 3 filled activity table"
    );

    // stage 4: time-varying vector
    let layout = Arc::new(VectorLayout::new(
        &catalog,
        Representation::TimeVarying,
        Granularity::HalfYear,
    ));
    let vector = build_vector(&catalog, &profile, &layout).expect("vector");
    let mut buf = Vec::new();
    cohortcast_core::represent::write_vectors_csv(&layout, &[vector], &mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        read("fixtures/toy/vector.csv"),
        "stage 4 feature vector"
    );

    // stage 5: prompt
    let doc = render_prompt(&catalog, &profile, 3).expect("prompt");
    assert_eq!(
        format!("{}\n", doc.text),
        read("fixtures/toy/prompt.txt"),
        "stage 5 rendered prompt"
    );

    assert!(t0.elapsed() < Duration::from_secs(1), "five stages must finish in < 1 s");
}

// ---------------------------------------------------------------- 2 ----

/// Criterion 2: a two-quarter recurrence timeout becomes one half-year
/// interval, and the conversion matches the frozen table on the whole
/// supported domain (1..=8 quarters, both granularities).
#[test]
fn criterion_02_timeout_conversion() {
    assert_eq!(convert_timeout(2, Granularity::HalfYear).unwrap(), 1);

    // frozen expectations: identity on quarters, round-half-up halving
    let quarter_expected = [1, 2, 3, 4, 5, 6, 7, 8];
    let half_expected = [1, 1, 2, 2, 3, 3, 4, 4];
    for t in 1u32..=8 {
        let i = (t - 1) as usize;
        assert_eq!(convert_timeout(t, Granularity::Quarter).unwrap(), quarter_expected[i]);
        assert_eq!(convert_timeout(t, Granularity::HalfYear).unwrap(), half_expected[i]);
        // conversion can never produce a zero-length tail
        assert!(convert_timeout(t, Granularity::HalfYear).unwrap() >= 1);
    }
    assert!(convert_timeout(0, Granularity::Quarter).is_err());
    assert!(convert_timeout(0, Granularity::HalfYear).is_err());
}

// ---------------------------------------------------------------- 3 ----

/// Criterion 3: at flag fractions where round(P*n) == P*n, the enrichment
/// ratio equals sensitivity / P to within 1e-12.
#[test]
fn criterion_03_enrichment_identity() {
    let n = 4000usize; // every default fraction times 4000 is an integer
    for (case, prevalence) in [(0u64, 0.35), (1u64, 0.02)] {
        let mut rng = substream(303, Stream::Sim, case);
        let scored: Vec<ScoredPatient> = (0..n)
            .map(|i| ScoredPatient {
                patient_id: format!("P{i:04}"),
                score: rng.gen::<f64>(),
                label: rng.gen_bool(prevalence),
            })
            .collect();
        for &fraction in &DEFAULT_TIER_FRACTIONS {
            let exact = fraction * n as f64;
            assert_eq!(exact.fract(), 0.0, "chosen n makes every tier exact");
            let tier = tier_metrics(&scored, fraction).unwrap();
            assert_eq!(tier.flagged, exact as usize);
            let identity = tier.sensitivity / fraction;
            assert!(
                (tier.oe_ratio - identity).abs() <= 1e-12,
                "fraction {fraction}: oe {} vs sensitivity/P {identity}",
                tier.oe_ratio
            );
        }
    }
}

// ---------------------------------------------------------------- 4 ----

/// Pairwise Mann-Whitney count: wins + half-ties over all pos/neg pairs.
fn brute_roc(scores: &[f64], labels: &[bool]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    let mut u = 0.0;
    for &p in &pos {
        for &q in &neg {
            u += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    u / (pos.len() as f64 * neg.len() as f64)
}

/// Average precision with equal-score groups collapsed, built from an
/// explicit descending group list.
fn brute_pr(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let total_pos = labels.iter().filter(|&&l| l).count() as f64;
    let (mut tp, mut seen, mut ap) = (0.0f64, 0.0f64, 0.0f64);
    for &t in &thresholds {
        let group: Vec<usize> =
            (0..scores.len()).filter(|&i| scores[i] == t).collect();
        let group_tp = group.iter().filter(|&&i| labels[i]).count() as f64;
        tp += group_tp;
        seen += group.len() as f64;
        ap += (group_tp / total_pos) * (tp / seen);
    }
    ap
}

/// Criterion 4: on 1000 instances with heavy ties (<= 12 distinct scores)
/// the ROC and PR areas match the brute-force oracles to 1e-12, and a
/// constant scorer earns PR-AUC exactly equal to prevalence.
#[test]
fn criterion_04_auc_matches_brute_force() {
    let n = 1000usize;
    for (case, distinct) in [(0u64, 12usize), (1, 3)] {
        let mut rng = substream(404, Stream::Sim, case);
        let values: Vec<f64> = (0..distinct).map(|_| rng.gen::<f64>()).collect();
        let scores: Vec<f64> = (0..n).map(|_| values[rng.gen_range(0..distinct)]).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        let (roc, pr) = (roc_auc(&scores, &labels).unwrap(), pr_auc(&scores, &labels).unwrap());
        assert!((roc - brute_roc(&scores, &labels)).abs() <= 1e-12, "roc case {case}");
        assert!((pr - brute_pr(&scores, &labels)).abs() <= 1e-12, "pr case {case}");
    }

    let scores = vec![0.7; n];
    let mut rng = substream(404, Stream::Sim, 2);
    let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.11)).collect();
    let prevalence = labels.iter().filter(|&&l| l).count() as f64 / n as f64;
    assert_eq!(pr_auc(&scores, &labels).unwrap(), prevalence, "constant scorer");
    assert_eq!(roc_auc(&scores, &labels).unwrap(), 0.5, "constant scorer is chance");
}

// ---------------------------------------------------------------- 5 ----

/// For fixed weights, the intercept subproblem is 1-d convex; bisect its
/// derivative (mean residual) to solve it, independent of the trainer.
fn best_intercept(x: &Array2<f64>, y: &[bool], w: &[f64]) -> f64 {
    let margin = |b: f64| -> f64 {
        let mut total = 0.0;
        for (i, row) in x.outer_iter().enumerate() {
            let t: f64 = b + row.iter().zip(w).map(|(&v, &wj)| v * wj).sum::<f64>();
            let p = 1.0 / (1.0 + (-t).exp());
            total += p - f64::from(y[i]);
        }
        total / y.len() as f64
    };
    let (mut lo, mut hi) = (-20.0f64, 20.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if margin(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Criterion 5: the analytic gradient matches central differences to 1e-5
/// relative; on a tiny instance the trained objective sits within 1e-3 of a
/// grid-plus-bisection brute-force optimum; shrinking C to ~0 zeroes every
/// weight. Whole test < 30 s.
#[test]
fn criterion_05_elastic_net_checks() {
    let t0 = Instant::now();

    // (a) finite-difference gradient validation
    let (n, d) = (40usize, 6usize);
    let mut rng = substream(505, Stream::Sim, 0);
    let x = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
    let y: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
    for (c, l1_ratio) in [(0.5, 0.0), (2.0, 0.6), (1.0, 1.0)] {
        let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let b: f64 = rng.gen_range(-0.5..0.5);
        let (grad_w, grad_b) = smooth_gradient(x.view(), &y, &w, b, c, l1_ratio);
        let h = 1e-5;
        for j in 0..d {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += h;
            wm[j] -= h;
            let fd = (smooth_objective(x.view(), &y, &wp, b, c, l1_ratio)
                - smooth_objective(x.view(), &y, &wm, b, c, l1_ratio))
                / (2.0 * h);
            assert!(
                (fd - grad_w[j]).abs() <= 1e-5 * grad_w[j].abs().max(1.0),
                "dw[{j}] fd {fd} vs analytic {}",
                grad_w[j]
            );
        }
        let fd_b = (smooth_objective(x.view(), &y, &w, b + h, c, l1_ratio)
            - smooth_objective(x.view(), &y, &w, b - h, c, l1_ratio))
            / (2.0 * h);
        assert!((fd_b - grad_b).abs() <= 1e-5 * grad_b.abs().max(1.0));
    }

    // (b) tiny instance: trained optimum vs exhaustive search
    let x = Array2::from_shape_vec(
        (12, 2),
        vec![
            1., 0., 1., 0., 0., 1., 0., 1., 1., 1., 0., 0., 1., 0., 0., 1., 1., 1., 0., 0., 1.,
            0., 0., 1.,
        ],
    )
    .unwrap();
    let y = vec![
        true, false, true, false, true, false, false, true, true, false, true, false,
    ];
    let names = vec!["f1".to_string(), "f2".to_string()];
    let (c, l1_ratio) = (0.5, 0.4);

    let mut brute = f64::INFINITY;
    let mut at = (0.0, 0.0);
    let coarse = |k: i32| k as f64 * 0.05 - 2.0;
    for i in 0..=80 {
        for j in 0..=80 {
            let w = [coarse(i), coarse(j)];
            let b = best_intercept(&x, &y, &w);
            let obj = objective(x.view(), &y, &w, b, c, l1_ratio);
            if obj < brute {
                brute = obj;
                at = (w[0], w[1]);
            }
        }
    }
    for i in -30..=30 {
        for j in -30..=30 {
            let w = [at.0 + i as f64 * 0.002, at.1 + j as f64 * 0.002];
            let b = best_intercept(&x, &y, &w);
            brute = brute.min(objective(x.view(), &y, &w, b, c, l1_ratio));
        }
    }

    let model = train_elastic_net(x.view(), &names, &y, c, l1_ratio, 10_000).unwrap();
    assert!(model.converged);
    assert!(
        (model.final_objective - brute).abs() <= 1e-3,
        "trained {} vs brute-force {brute}",
        model.final_objective
    );

    // (c) C -> 0+ drives every weight to exactly zero
    let mut rng = substream(505, Stream::Sim, 1);
    let x = Array2::from_shape_fn((60, 4), |_| f64::from(rng.gen_bool(0.5)));
    let y: Vec<bool> = (0..60).map(|_| rng.gen_bool(0.3)).collect();
    let names: Vec<String> = (0..4).map(|j| format!("f{j}")).collect();
    let model = train_elastic_net(x.view(), &names, &y, 1e-8, 0.5, 10_000).unwrap();
    for (name, w) in &model.params.weights {
        assert!(w.abs() <= 1e-9, "weight {name} = {w} should vanish");
    }
    let base = y.iter().filter(|&&l| l).count() as f64 / y.len() as f64;
    let logit = (base / (1.0 - base)).ln();
    assert!((model.params.intercept - logit).abs() <= 1e-3, "intercept tracks the base rate");

    assert!(t0.elapsed() < Duration::from_secs(30));
}

// ---------------------------------------------------------------- 6 ----

/// Criterion 6: on a 100k cohort the split hits the 92/3/5 counts exactly
/// and deterministically, and per-stratum downsampling keeps all positives
/// plus exactly min(pos, neg) negatives, dropping zero-positive strata.
/// Whole test < 10 s.
#[test]
fn criterion_06_split_and_downsample_contract() {
    let t0 = Instant::now();
    let ids: Vec<String> = (0..100_000).map(|i| format!("P{i:06}")).collect();

    let assignment = split(&ids, 606).unwrap();
    assert_eq!(assignment.counts(), (92_000, 3_000, 5_000), "92/3/5 exact");
    let mut all: Vec<String> = assignment.ids_in(SplitLabel::Train);
    all.extend(assignment.ids_in(SplitLabel::Validation));
    all.extend(assignment.ids_in(SplitLabel::Test));
    all.sort();
    assert_eq!(all, ids, "partition covers every patient exactly once");
    assert_eq!(split(&ids, 606).unwrap(), assignment, "same seed, same split");
    assert_ne!(
        split(&ids, 607).unwrap().assignments,
        assignment.assignments,
        "seed moves the split"
    );

    // planted strata: (gender, age, race) -> (positives, negatives)
    let plan = [
        (("m", "a1", "r1"), (40usize, 400usize)),
        (("m", "a2", "r1"), (3, 2)),
        (("f", "a1", "r2"), (0, 250)),
        (("f", "a2", "r2"), (25, 25)),
    ];
    let mut patients = Vec::new();
    for ((g, a, r), (pos, neg)) in plan {
        for k in 0..pos + neg {
            patients.push(StratifiedPatient {
                patient_id: format!("{g}-{a}-{r}-{k:04}"),
                label: k < pos,
                gender: g.into(),
                age_band: a.into(),
                race: r.into(),
            });
        }
    }
    let (retained, report) = downsample_train(&patients, 606);
    for ((g, a, r), (pos, neg)) in plan {
        let stratum = report
            .strata
            .iter()
            .find(|s| s.gender == g && s.age_band == a && s.race == r)
            .expect("each planted stratum is reported");
        assert_eq!((stratum.positives, stratum.negatives), (pos, neg));
        assert_eq!(
            stratum.retained_negatives,
            if pos == 0 { 0 } else { pos.min(neg) },
            "negatives kept = min(pos, neg), zero-positive strata dropped"
        );
    }
    let expected: usize = plan
        .iter()
        .map(|&(_, (p, n))| if p == 0 { 0 } else { p + p.min(n) })
        .sum();
    assert_eq!(retained.len(), expected);
    for p in patients.iter().filter(|p| p.label) {
        let dropped_stratum = p.gender == "f" && p.age_band == "a1";
        assert_eq!(
            retained.contains(&p.patient_id),
            !dropped_stratum,
            "all positives of kept strata are retained"
        );
    }
    let (retained2, _) = downsample_train(&patients, 606);
    assert_eq!(retained, retained2, "downsampling is deterministic");

    assert!(t0.elapsed() < Duration::from_secs(10));
}

// ---------------------------------------------------------------- 7 ----

/// Criterion 7: the stratified percentile bootstrap's 95% ROC-AUC interval
/// covers the fixed population value for 93-97% of 500 regenerated 5000-
/// patient cohorts.
#[test]
fn criterion_07_bootstrap_coverage() {
    let t0 = Instant::now();
    let catalog = toy_catalog();
    let spec = CohortSpec::load(&root().join("cohorts/coverage.toml")).unwrap();

    // population truth: pinned intercepts make it seed-invariant
    let truth = oracle_auc(&catalog, &spec, 12, 1_000_000, 777).unwrap();
    assert!(truth.roc_se < 2.5e-3, "oracle noise {} must be well inside CI widths", truth.roc_se);

    let cohorts = 500usize;
    let covered = (0..cohorts)
        .filter(|&r| {
            let mut cohort = spec.clone();
            cohort.seed = derive_seed(31, &format!("coverage-{r}"));
            let generator = Generator::new(&catalog, cohort).unwrap();
            let n = generator.n_patients();
            let scores: Vec<f64> =
                (0..n).map(|i| generator.bayes_score(i, 12).unwrap()).collect();
            let labels: Vec<bool> = (0..n).map(|i| generator.labels(i)[3]).collect();
            let ci = bootstrap_ci_roc(&scores, &labels, 2000, derive_seed(cohort_seed(r), "ci"))
                .unwrap();
            ci.lower <= truth.roc_auc && truth.roc_auc <= ci.upper
        })
        .count();

    let rate = covered as f64 / cohorts as f64;
    assert!(
        (0.93..=0.97).contains(&rate),
        "coverage {rate:.3} ({covered}/{cohorts}) outside [0.93, 0.97]"
    );
    assert!(t0.elapsed() < Duration::from_secs(600), "coverage study stays minutes-scale");
}

fn cohort_seed(r: usize) -> u64 {
    derive_seed(31, &format!("coverage-{r}"))
}

// ---------------------------------------------------------------- 8 ----

/// Criterion 8: under a shared score-outcome relationship the
/// heterogeneity test rejects at the nominal 5% level between 3.5% and
/// 6.5% of 1000 null simulations, and the step-up FDR adjustment matches
/// the hand-worked example exactly.
#[test]
fn criterion_08_lrt_calibration_and_fdr() {
    let sims = 1000usize;
    let n = 900usize;
    let group_names = ["g1", "g2", "g3"];
    let rejects = (0..sims)
        .filter(|&s| {
            let mut rng = substream(808, Stream::Sim, s as u64);
            let mut scored = Vec::with_capacity(n);
            let mut levels = Vec::with_capacity(n);
            for i in 0..n {
                let score: f64 = rng.gen_range(0.02..0.98);
                let logit = (score / (1.0 - score)).ln();
                let p = 1.0 / (1.0 + (-(0.9 * logit - 0.4)).exp());
                scored.push(ScoredPatient {
                    patient_id: format!("P{i:04}"),
                    score,
                    label: rng.gen_bool(p),
                });
                levels.push(group_names[rng.gen_range(0..3)].to_string());
            }
            lrt_heterogeneity(&scored, Grouping::Race, &levels).unwrap().p_value < 0.05
        })
        .count();
    let rate = rejects as f64 / sims as f64;
    assert!(
        (0.035..=0.065).contains(&rate),
        "type-I rate {rate:.4} ({rejects}/{sims}) outside [0.035, 0.065]"
    );

    let q = bh_fdr(&[0.01, 0.02, 0.03, 0.04, 0.05]);
    assert_eq!(q, vec![0.05; 5], "step-up ties every rank to the largest p");
}

// ---------------------------------------------------------------- 9 ----

/// Criterion 9: ingesting the externally-scored race subgroups yields a
/// reliable-level gap of exactly 5.92 points with worst group exactly 5.06,
/// and every stored reliability flag reproduces from the published rule.
#[test]
fn criterion_09_fairness_ingestion() {
    let rows: Vec<SubgroupResult> =
        serde_json::from_str(&read("fixtures/fairness/race_subgroups.json")).unwrap();
    assert_eq!(rows.len(), 6);

    for row in &rows {
        let expected = match &row.ci {
            Some(ci) => {
                row.events >= RELIABLE_MIN_EVENTS
                    && row.n - row.events >= RELIABLE_MIN_NONEVENTS
                    && ci.upper - ci.lower <= RELIABLE_MAX_CI_WIDTH
            }
            None => false,
        };
        assert_eq!(row.reliable, expected, "stored flag for {} reproduces", row.level);
    }

    let summary = fairness_summary(&rows).unwrap();
    assert_eq!(summary.grouping, Grouping::Race);
    assert_eq!(summary.max_gap * 100.0, 5.92, "gap in percentage points is exact");
    assert_eq!(summary.worst_group * 100.0, 5.06, "worst reliable level is exact");

    // the unreliable extremes on both sides must not leak into the summary
    let best_unreliable = rows.iter().find(|r| r.level == "Native Hawaiian").unwrap();
    let worst_unreliable = rows.iter().find(|r| r.level == "Asian").unwrap();
    assert!(best_unreliable.pr_auc.unwrap() > summary.worst_group + summary.max_gap);
    assert!(worst_unreliable.pr_auc.unwrap() < summary.worst_group);
}

// --------------------------------------------------------------- 10 ----

/// Criterion 10: across 10 reseeded 200k cohorts with sparse re-recording,
/// persistence fill beats the unfilled time-varying layout, and both
/// time-varying layouts beat the whole-window summary, each in at least
/// 8 of 10 runs (test PR-AUC, shared split per run). Under 10 minutes.
#[test]
fn criterion_10_persistence_ablation() {
    let t0 = Instant::now();
    let catalog = toy_catalog();
    let spec = CohortSpec::load(&root().join("cohorts/ablation.toml")).unwrap();
    let grid = HyperGrid {
        c_values: vec![0.1, 1.0, 10.0],
        l1_ratios: vec![0.0, 0.5, 1.0],
        max_iter: 300,
    };

    let (mut fill_wins, mut tv_wins, mut no_fill_wins) = (0, 0, 0);
    for k in 0..10u64 {
        let mut cohort = spec.clone();
        cohort.seed = derive_seed(41, &format!("ablation-{k}"));
        let report = run_ablation(&catalog, cohort, 12, &grid).unwrap();
        let fixed = report.arm(Representation::Static).test_pr_auc;
        let fill = report.arm(Representation::TimeVarying).test_pr_auc;
        let no_fill = report.arm(Representation::TimeVaryingNoFill).test_pr_auc;
        fill_wins += usize::from(fill > no_fill);
        tv_wins += usize::from(fill > fixed);
        no_fill_wins += usize::from(no_fill > fixed);
    }

    assert!(fill_wins >= 8, "fill beat no-fill only {fill_wins}/10 times");
    assert!(tv_wins >= 8, "filled time-varying beat static only {tv_wins}/10 times");
    assert!(no_fill_wins >= 8, "unfilled time-varying beat static only {no_fill_wins}/10 times");
    assert!(t0.elapsed() < Duration::from_secs(600), "ablation must finish in < 10 min");
}

// --------------------------------------------------------------- 11 ----

/// Criterion 11: the calibrated reference cohort realizes each cumulative
/// event-rate target within +-15% relative at n = 200k.
#[test]
fn criterion_11_prevalence_calibration() {
    let catalog = toy_catalog();
    let spec = CohortSpec::load(&root().join("cohorts/reference.toml")).unwrap();
    let targets: Vec<(usize, f64)> = [(0, "m3"), (1, "m6"), (2, "m9"), (3, "m12")]
        .iter()
        .map(|&(i, key)| (i, spec.prevalence_targets[key]))
        .collect();
    assert_eq!(
        targets.iter().map(|&(_, t)| t).collect::<Vec<_>>(),
        vec![0.0032, 0.0063, 0.0092, 0.0119]
    );

    let generator = Generator::new(&catalog, spec).unwrap();
    let n = generator.n_patients();
    let labels: Vec<[bool; 4]> = par::map_indexed(n, |i| generator.labels(i));
    for (w, target) in targets {
        let rate =
            labels.iter().filter(|l| l[w]).count() as f64 / n as f64;
        let relative = (rate - target).abs() / target;
        assert!(
            relative <= 0.15,
            "window {w}: realized {rate:.5} vs target {target:.5} ({:.1}% off)",
            relative * 100.0
        );
    }

    // labels are cumulative: a shorter-window event stays an event later
    let monotone = labels.iter().all(|l| (0..3).all(|w| !l[w] || l[w + 1]));
    assert!(monotone);

    // sanity: the split retained set in the criterion-10 pipeline is shared
    // machinery; keep an explicit cross-check that ids are unique here too
    let mut ids: Vec<String> = (0..n).map(|i| generator.patient_id(i)).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), n);
}

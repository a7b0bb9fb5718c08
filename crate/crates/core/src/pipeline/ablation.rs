//! Representation ablation: generate a planted cohort, split it once, and
//! train the same grid under each standard representation, so any metric
//! difference between arms is attributable to the representation alone.
//!
//! Only split-retained patients are materialized: the generator recreates a
//! patient's visits and attributes from its index on demand, so the full
//! cohort never has to sit in memory.

use crate::catalog::Catalog;
use crate::eval::pr_auc;
use crate::pipeline::{
    downsample_train, grid_search, split, DownsampleReport, HyperGrid, PipelineError, SplitLabel,
    StratifiedPatient,
};
use crate::par;
use crate::represent::prompt::WINDOWS_MONTHS;
use crate::represent::{
    attribute_level, build_vector, standard_layouts, PatientProfile, Representation,
};
use crate::synth::{CohortSpec, Generator};
use crate::timeline::aggregate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub representation: Representation,
    pub c: f64,
    pub l1_ratio: f64,
    pub validation_pr_auc: f64,
    pub test_pr_auc: f64,
    pub nonzero_weights: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub window_months: u32,
    /// Training patients after stratified downsampling.
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub test_positives: usize,
    pub downsample: DownsampleReport,
    /// Static, time-varying, time-varying-no-fill, in that order.
    pub arms: Vec<ArmResult>,
}

impl AblationReport {
    pub fn arm(&self, representation: Representation) -> &ArmResult {
        self.arms
            .iter()
            .find(|a| a.representation == representation)
            .expect("report carries all three arms")
    }
}

fn synth_err(e: crate::synth::SynthError) -> PipelineError {
    PipelineError::Cohort(e.to_string())
}

/// Index encoded in a generator patient id ("S0042" -> 42).
fn generator_index(id: &str) -> usize {
    id[1..].parse().expect("generator ids are S-prefixed indices")
}

/// Runs the three-arm ablation for one seeded spec and prediction window.
/// The split, downsampling, training grid, and test set are shared across
/// arms; only the vector layout differs.
pub fn run_ablation(
    catalog: &Catalog,
    spec: CohortSpec,
    window_months: u32,
    grid: &HyperGrid,
) -> Result<AblationReport, PipelineError> {
    let window_index = WINDOWS_MONTHS
        .iter()
        .position(|&w| w == window_months)
        .ok_or_else(|| PipelineError::BadHyper(format!("unknown window {window_months} months")))?;
    let seed = spec.seed;
    let generator = Generator::new(catalog, spec).map_err(synth_err)?;
    let n = generator.n_patients();

    let ids: Vec<String> = (0..n).map(|i| generator.patient_id(i)).collect();
    let assignment = split(&ids, seed)?;
    let labels: Vec<bool> =
        par::map_indexed(n, |i| generator.labels(i)[window_index]);

    // stratified downsampling of the training partition
    let train_ids = assignment.ids_in(SplitLabel::Train);
    let stratified: Vec<StratifiedPatient> = par::map_slice(&train_ids, |id| {
        let index = generator_index(id);
        let attrs = generator.demographics(index);
        StratifiedPatient {
            patient_id: id.clone(),
            label: labels[index],
            gender: attribute_level(&attrs, "Gender").unwrap_or_else(|| "unknown".into()),
            age_band: attribute_level(&attrs, "Age").unwrap_or_else(|| "unknown".into()),
            race: attribute_level(&attrs, "Race").unwrap_or_else(|| "unknown".into()),
        }
    });
    let (retained, downsample) = downsample_train(&stratified, seed);

    // materialize only retained + validation + test patients
    let kept_train: Vec<String> = retained.into_iter().collect();
    let val_ids = assignment.ids_in(SplitLabel::Validation);
    let test_ids = assignment.ids_in(SplitLabel::Test);
    let bounds = (kept_train.len(), kept_train.len() + val_ids.len());
    let ordered: Vec<String> =
        kept_train.into_iter().chain(val_ids).chain(test_ids).collect();

    let layouts = standard_layouts(catalog, generator.grid().granularity());
    let built: Vec<Result<[Vec<f64>; 3], PipelineError>> = par::map_slice(&ordered, |id| {
        let index = generator_index(id);
        let visits = generator.visits(index);
        let raw = aggregate(catalog, id, &visits, *generator.grid())
            .map_err(|e| PipelineError::Cohort(e.to_string()))?;
        let profile = PatientProfile::assemble(catalog, generator.demographics(index), raw)
            .map_err(|e| PipelineError::Cohort(e.to_string()))?;
        let mut vectors = [Vec::new(), Vec::new(), Vec::new()];
        for (k, layout) in layouts.iter().enumerate() {
            vectors[k] = build_vector(catalog, &profile, layout)
                .map_err(|e| PipelineError::Cohort(e.to_string()))?
                .values;
        }
        Ok(vectors)
    });
    let built: Vec<[Vec<f64>; 3]> = built.into_iter().collect::<Result<_, _>>()?;
    let row_labels: Vec<bool> =
        ordered.iter().map(|id| labels[generator_index(id)]).collect();

    let slice_of = |range: std::ops::Range<usize>, arm: usize| -> Array2<f64> {
        let width = layouts[arm].len();
        let mut flat = Vec::with_capacity(range.len() * width);
        for row in &built[range] {
            flat.extend_from_slice(&row[arm]);
        }
        Array2::from_shape_vec((flat.len() / width, width), flat)
            .expect("rows share the layout width")
    };

    let (train_y, val_y, test_y) = (
        &row_labels[..bounds.0],
        &row_labels[bounds.0..bounds.1],
        &row_labels[bounds.1..],
    );
    let mut arms = Vec::with_capacity(3);
    for (arm, layout) in layouts.iter().enumerate() {
        let names: Vec<String> = layout.names().map(String::from).collect();
        let train_x = slice_of(0..bounds.0, arm);
        let val_x = slice_of(bounds.0..bounds.1, arm);
        let test_x = slice_of(bounds.1..ordered.len(), arm);
        let result = grid_search(train_x.view(), &names, train_y, val_x.view(), val_y, grid)?;
        let test_scores =
            crate::pipeline::predict_proba(test_x.view(), &names, &result.best.params)?;
        arms.push(ArmResult {
            representation: layout.representation,
            c: result.best.params.c,
            l1_ratio: result.best.params.l1_ratio,
            validation_pr_auc: result.best_validation_pr_auc,
            test_pr_auc: pr_auc(&test_scores, test_y)?,
            nonzero_weights: result.best.params.nonzero_weights(),
        });
    }

    Ok(AblationReport {
        seed,
        window_months,
        n_train: bounds.0,
        n_validation: bounds.1 - bounds.0,
        n_test: ordered.len() - bounds.1,
        test_positives: test_y.iter().filter(|&&y| y).count(),
        downsample,
        arms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use crate::synth::tests::{test_spec, TEST_CATALOG};

    fn small_grid() -> HyperGrid {
        HyperGrid { c_values: vec![1.0], l1_ratios: vec![0.0], max_iter: 200 }
    }

    #[test]
    fn report_shape_and_shared_split() {
        let catalog = Catalog::parse_str(TEST_CATALOG).unwrap();
        let report =
            run_ablation(&catalog, test_spec(2000, 11), 12, &small_grid()).unwrap();
        assert_eq!(report.n_test, 100);
        assert_eq!(report.n_validation, 60);
        assert!(report.n_train > 0 && report.n_train < 1840);
        // balanced training set: downsampling keeps one negative per positive
        let kept: usize =
            report.downsample.strata.iter().map(|s| s.positives + s.retained_negatives).sum();
        assert_eq!(report.n_train, kept);
        assert!(report.test_positives > 0);
        let reps: Vec<_> = report.arms.iter().map(|a| a.representation).collect();
        assert_eq!(
            reps,
            vec![
                Representation::Static,
                Representation::TimeVarying,
                Representation::TimeVaryingNoFill
            ]
        );
        for arm in &report.arms {
            assert!(arm.test_pr_auc > 0.0 && arm.test_pr_auc <= 1.0);
            assert!(arm.validation_pr_auc > 0.0);
        }
        assert_eq!(report.arm(Representation::Static).c, 1.0);
    }

    #[test]
    fn deterministic_and_serializable() {
        let catalog = Catalog::parse_str(TEST_CATALOG).unwrap();
        let a = run_ablation(&catalog, test_spec(500, 7), 6, &small_grid()).unwrap();
        let b = run_ablation(&catalog, test_spec(500, 7), 6, &small_grid()).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        let back: AblationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn rejects_unknown_window() {
        let catalog = Catalog::parse_str(TEST_CATALOG).unwrap();
        let err = run_ablation(&catalog, test_spec(500, 7), 5, &small_grid()).unwrap_err();
        assert!(matches!(err, PipelineError::BadHyper(_)));
    }
}

pub mod ablate;
pub mod evaluate;
pub mod fairness;
pub mod features;
pub mod ingest;
pub mod prompts;
pub mod split;
pub mod synth;
pub mod train;

use anyhow::{bail, Context, Result};
use cohortcast_core::catalog::Catalog;
use cohortcast_core::eval::ScoredPatient;
use cohortcast_core::represent::{AttrValue, PatientProfile, Representation};
use cohortcast_core::synth::{labels_for_window, read_labels_csv};
use cohortcast_core::timeline::{
    aggregate, group_by_patient, read_visits, Granularity, IntervalGrid,
};
use chrono::NaiveDate;
use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

pub fn parse_granularity(text: &str) -> Result<Granularity> {
    match text {
        "quarter" => Ok(Granularity::Quarter),
        "half-year" => Ok(Granularity::HalfYear),
        other => bail!("unknown granularity {other:?} (quarter, half-year)"),
    }
}

pub fn granularity_name(granularity: Granularity) -> &'static str {
    match granularity {
        Granularity::Quarter => "quarter",
        Granularity::HalfYear => "half-year",
    }
}

pub fn parse_representation(text: &str) -> Result<Representation> {
    match text {
        "static" => Ok(Representation::Static),
        "time-varying" => Ok(Representation::TimeVarying),
        "time-varying-no-fill" => Ok(Representation::TimeVaryingNoFill),
        other => bail!(
            "unknown representation {other:?} (static, time-varying, time-varying-no-fill)"
        ),
    }
}

pub fn representation_name(representation: Representation) -> &'static str {
    match representation {
        Representation::Static => "static",
        Representation::TimeVarying => "time-varying",
        Representation::TimeVaryingNoFill => "time-varying-no-fill",
    }
}

pub fn parse_date(text: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .with_context(|| format!("bad date {text:?}, expected YYYY-MM-DD"))
}

pub fn load_catalog(path: &Path) -> Result<Catalog> {
    Catalog::load(path).with_context(|| format!("loading catalog {}", path.display()))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

/// One assembled profile per attribute-file patient, in id order. Patients
/// without visits get an all-zero activity matrix; visits for unknown
/// patients are an error.
pub fn assemble_cohort(
    catalog: &Catalog,
    visits_path: &Path,
    attributes_path: &Path,
    window_start: NaiveDate,
    granularity: Granularity,
) -> Result<Vec<PatientProfile>> {
    let grid = IntervalGrid::new(window_start, granularity)?;
    let attributes = cohortcast_core::represent::read_attributes_csv(
        File::open(attributes_path)
            .with_context(|| format!("opening {}", attributes_path.display()))?,
    )?;
    let visits = read_visits(visits_path)?;
    let mut by_patient: HashMap<String, Vec<_>> = HashMap::new();
    for (id, vs) in group_by_patient(visits) {
        if !attributes.contains_key(&id) {
            bail!("visits reference patient {id:?} absent from {}", attributes_path.display());
        }
        by_patient.insert(id, vs);
    }
    attributes
        .into_iter()
        .map(|(id, attrs)| {
            let patient_visits = by_patient.remove(&id).unwrap_or_default();
            let raw = aggregate(catalog, &id, &patient_visits, grid)?;
            Ok(PatientProfile::assemble(catalog, attrs, raw)?)
        })
        .collect()
}

/// Joins a `patient_id,score` file with one window's labels. Every scored
/// patient must carry a label; label-only patients are ignored.
pub fn scored_patients(
    scores_path: &Path,
    labels_path: &Path,
    window_months: u32,
) -> Result<Vec<ScoredPatient>> {
    let labels = read_labels_csv(open(labels_path)?)?;
    let labels = labels_for_window(&labels, window_months)?;
    let cohort_ids = labels.keys().cloned().collect();
    let scores = cohortcast_core::pipeline::ingest_scores(
        open(scores_path)?,
        &cohort_ids,
        cohortcast_core::pipeline::Provenance::External("join".into()),
    )?;
    Ok(scores
        .scores
        .into_iter()
        .map(|(patient_id, score)| {
            let label = labels[&patient_id];
            ScoredPatient { patient_id, score, label }
        })
        .collect())
}

/// Per-patient level of one static attribute, aligned with `scored`.
pub fn attribute_levels(
    attributes: &BTreeMap<String, BTreeMap<String, AttrValue>>,
    scored: &[ScoredPatient],
    feature: &str,
) -> Result<Vec<String>> {
    scored
        .iter()
        .map(|s| {
            let attrs = attributes
                .get(&s.patient_id)
                .with_context(|| format!("patient {:?} missing from attributes", s.patient_id))?;
            let attr = attrs
                .get(feature)
                .with_context(|| format!("patient {:?} lacks attribute {feature:?}", s.patient_id))?;
            Ok(attr.level.clone())
        })
        .collect()
}

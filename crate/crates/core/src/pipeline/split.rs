//! Patient-level splits and stratified training downsampling.

use crate::pipeline::PipelineError;
use crate::rng::{substream, Stream};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitLabel {
    Train,
    Validation,
    Test,
}

impl SplitLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitLabel::Train => "train",
            SplitLabel::Validation => "validation",
            SplitLabel::Test => "test",
        }
    }

    fn parse(text: &str) -> Option<Self> {
        match text {
            "train" => Some(SplitLabel::Train),
            "validation" => Some(SplitLabel::Validation),
            "test" => Some(SplitLabel::Test),
            _ => None,
        }
    }
}

pub const SPLIT_FRACTIONS: (f64, f64, f64) = (0.92, 0.03, 0.05);
pub const MIN_SPLIT_PATIENTS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignments: BTreeMap<String, SplitLabel>,
    pub fractions: (f64, f64, f64),
    pub seed: u64,
}

impl SplitAssignment {
    pub fn label_of(&self, patient_id: &str) -> Option<SplitLabel> {
        self.assignments.get(patient_id).copied()
    }

    pub fn ids_in(&self, label: SplitLabel) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|(_, &l)| l == label)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for &l in self.assignments.values() {
            match l {
                SplitLabel::Train => c.0 += 1,
                SplitLabel::Validation => c.1 += 1,
                SplitLabel::Test => c.2 += 1,
            }
        }
        c
    }

    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<(), PipelineError> {
        writeln!(writer, "patient_id,split").map_err(PipelineError::io)?;
        for (id, label) in &self.assignments {
            writeln!(writer, "{},{}", id, label.as_str()).map_err(PipelineError::io)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R, seed: u64) -> Result<Self, PipelineError> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .transpose()
            .map_err(PipelineError::io)?
            .ok_or_else(|| PipelineError::BadFile("empty split file".into()))?;
        if header.trim() != "patient_id,split" {
            return Err(PipelineError::BadFile(format!(
                "expected header patient_id,split, found {header:?}"
            )));
        }
        let mut assignments = BTreeMap::new();
        for (idx, line) in lines.enumerate() {
            let line = line.map_err(PipelineError::io)?;
            if line.trim().is_empty() {
                continue;
            }
            let (id, label) = line.split_once(',').ok_or_else(|| {
                PipelineError::BadFile(format!("line {}: missing comma", idx + 2))
            })?;
            let label = SplitLabel::parse(label.trim()).ok_or_else(|| {
                PipelineError::BadFile(format!("line {}: unknown split {label:?}", idx + 2))
            })?;
            if assignments.insert(id.to_string(), label).is_some() {
                return Err(PipelineError::DuplicateId(id.to_string()));
            }
        }
        Ok(SplitAssignment { assignments, fractions: SPLIT_FRACTIONS, seed })
    }
}

/// 92/3/5 patient-level split. Ids are sorted before shuffling so the
/// assignment depends only on the id set and the seed.
pub fn split(patient_ids: &[String], seed: u64) -> Result<SplitAssignment, PipelineError> {
    let n = patient_ids.len();
    if n < MIN_SPLIT_PATIENTS {
        return Err(PipelineError::TooFewPatients(n));
    }
    let mut sorted: Vec<&String> = patient_ids.iter().collect();
    sorted.sort();
    for pair in sorted.windows(2) {
        if pair[0] == pair[1] {
            return Err(PipelineError::DuplicateId(pair[0].clone()));
        }
    }
    let mut rng = substream(seed, Stream::Split, 0);
    sorted.shuffle(&mut rng);

    let n_test = (SPLIT_FRACTIONS.2 * n as f64).round() as usize;
    let n_val = (SPLIT_FRACTIONS.1 * n as f64).round() as usize;
    let mut assignments = BTreeMap::new();
    for (i, id) in sorted.into_iter().enumerate() {
        let label = if i < n_test {
            SplitLabel::Test
        } else if i < n_test + n_val {
            SplitLabel::Validation
        } else {
            SplitLabel::Train
        };
        assignments.insert(id.clone(), label);
    }
    Ok(SplitAssignment { assignments, fractions: SPLIT_FRACTIONS, seed })
}

/// One training patient with the matching variables used for downsampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratifiedPatient {
    pub patient_id: String,
    pub label: bool,
    pub gender: String,
    pub age_band: String,
    pub race: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub gender: String,
    pub age_band: String,
    pub race: String,
    pub positives: usize,
    pub negatives: usize,
    pub retained_negatives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownsampleReport {
    pub strata: Vec<StratumReport>,
    pub total_before: usize,
    pub total_after: usize,
    pub positives: usize,
    pub retained_negatives: usize,
    /// Realized negative:positive ratio after downsampling.
    pub global_ratio: f64,
}

/// Keeps every positive; within each (gender, age band, race) stratum,
/// samples negatives without replacement down to that stratum's positive
/// count. Strata without positives contribute nothing.
pub fn downsample_train(
    patients: &[StratifiedPatient],
    seed: u64,
) -> (BTreeSet<String>, DownsampleReport) {
    let mut by_stratum: BTreeMap<(&str, &str, &str), (Vec<&str>, Vec<&str>)> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for p in patients {
        assert!(seen.insert(p.patient_id.as_str()), "duplicate patient id {:?}", p.patient_id);
        let entry = by_stratum
            .entry((&p.gender, &p.age_band, &p.race))
            .or_default();
        if p.label {
            entry.0.push(&p.patient_id);
        } else {
            entry.1.push(&p.patient_id);
        }
    }

    let mut retained = BTreeSet::new();
    let mut strata = Vec::with_capacity(by_stratum.len());
    let mut positives = 0;
    let mut retained_negatives = 0;
    for (index, ((gender, age_band, race), (pos, mut neg))) in
        by_stratum.into_iter().enumerate()
    {
        neg.sort_unstable();
        let keep = if pos.is_empty() {
            0
        } else {
            let mut rng = substream(seed, Stream::Downsample, index as u64);
            neg.shuffle(&mut rng);
            pos.len().min(neg.len())
        };
        for id in &pos {
            retained.insert((*id).to_string());
        }
        for id in neg.iter().take(keep) {
            retained.insert((*id).to_string());
        }
        positives += pos.len();
        retained_negatives += keep;
        strata.push(StratumReport {
            gender: gender.to_string(),
            age_band: age_band.to_string(),
            race: race.to_string(),
            positives: pos.len(),
            negatives: neg.len(),
            retained_negatives: keep,
        });
    }
    let report = DownsampleReport {
        strata,
        total_before: patients.len(),
        total_after: retained.len(),
        positives,
        retained_negatives,
        global_ratio: if positives == 0 {
            0.0
        } else {
            retained_negatives as f64 / positives as f64
        },
    };
    (retained, report)
}

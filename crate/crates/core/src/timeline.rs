//! Interval grids, visit aggregation and persistence fill.
//!
//! A one-year observation window is tiled into calendar quarters or
//! half-years. Visits are aggregated into a raw activity matrix (binary
//! occurrence for diagnosis/social features, counts for utilization), and
//! the persistence fill extends raw observations through later intervals
//! according to each feature's catalog policy. Counts are never filled.

use crate::catalog::{Catalog, CountSource, PersistencePolicy, ValueKind};
use chrono::{Datelike, Months, NaiveDate};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TimelineError {
    #[error("window must start on the first day of a month, got {0}")]
    WindowStart(NaiveDate),
    #[error("timeout must be at least one quarter")]
    NonPositiveTimeout,
    #[error("visit {0} belongs to patient {1:?}, expected {2:?}")]
    MixedPatients(NaiveDate, String, String),
    #[error("matrix is already persistence-filled")]
    AlreadyFilled,
    #[error("matrix has {got} rows but the catalog defines {want} temporal features")]
    MatrixShape { got: usize, want: usize },
    #[error("line {line}: {message}")]
    VisitParse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Interval length of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    Quarter,
    HalfYear,
}

impl Granularity {
    pub fn intervals_per_year(self) -> usize {
        match self {
            Granularity::Quarter => 4,
            Granularity::HalfYear => 2,
        }
    }

    pub fn months_per_interval(self) -> u32 {
        match self {
            Granularity::Quarter => 3,
            Granularity::HalfYear => 6,
        }
    }

    /// Interval label: Q1..Q4 or H1..H2.
    pub fn label(self, index: usize) -> String {
        match self {
            Granularity::Quarter => format!("Q{}", index + 1),
            Granularity::HalfYear => format!("H{}", index + 1),
        }
    }
}

/// Converts a timeout expressed in quarters to grid intervals: identity on
/// quarterly grids; round-half-up halving with a floor of one interval on
/// half-year grids (two quarters equal one half-year).
pub fn convert_timeout(timeout_quarters: u32, granularity: Granularity) -> Result<u32, TimelineError> {
    if timeout_quarters == 0 {
        return Err(TimelineError::NonPositiveTimeout);
    }
    Ok(match granularity {
        Granularity::Quarter => timeout_quarters,
        Granularity::HalfYear => (timeout_quarters + 1) / 2,
    })
}

/// One-year window tiled by calendar month arithmetic: interval `i` spans
/// months `[i*m, (i+1)*m)` from the window start, which must be the first
/// of a month.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalGrid {
    start: NaiveDate,
    granularity: Granularity,
}

impl IntervalGrid {
    pub fn new(start: NaiveDate, granularity: Granularity) -> Result<Self, TimelineError> {
        if start.day() != 1 {
            return Err(TimelineError::WindowStart(start));
        }
        Ok(IntervalGrid { start, granularity })
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    /// Last day inside the window.
    pub fn end(&self) -> NaiveDate {
        self.start + Months::new(12) - chrono::Days::new(1)
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn interval_count(&self) -> usize {
        self.granularity.intervals_per_year()
    }

    /// Index of the interval containing `date`, or None outside the window.
    pub fn interval_of(&self, date: NaiveDate) -> Option<usize> {
        if date < self.start || date > self.end() {
            return None;
        }
        let months = (date.year() - self.start.year()) * 12
            + (date.month() as i32 - self.start.month() as i32);
        Some(months as usize / self.granularity.months_per_interval() as usize)
    }

    pub fn interval_start(&self, index: usize) -> NaiveDate {
        self.start + Months::new(index as u32 * self.granularity.months_per_interval())
    }

    pub fn interval_end(&self, index: usize) -> NaiveDate {
        self.start + Months::new((index as u32 + 1) * self.granularity.months_per_interval())
            - chrono::Days::new(1)
    }

    pub fn label(&self, index: usize) -> String {
        self.granularity.label(index)
    }
}

/// One clinical encounter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub patient_id: String,
    pub date: NaiveDate,
    pub diagnoses: Vec<String>,
    pub stops: Vec<String>,
    /// Care-network id, when known; feeds distinct-network counts.
    pub visn: Option<String>,
}

/// Per-patient activity over the grid. Rows align with
/// [`Catalog::temporal_features`] order; binary rows hold 0/1, count rows
/// hold non-negative counts.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivityMatrix {
    pub patient_id: String,
    pub grid: IntervalGrid,
    pub filled: bool,
    rows: Vec<Vec<u32>>,
}

impl ActivityMatrix {
    pub fn zeroed(patient_id: String, grid: IntervalGrid, catalog: &Catalog) -> Self {
        ActivityMatrix {
            patient_id,
            grid,
            filled: false,
            rows: vec![vec![0; grid.interval_count()]; catalog.temporal_count()],
        }
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn row(&self, index: usize) -> &[u32] {
        &self.rows[index]
    }

    pub fn row_mut(&mut self, index: usize) -> &mut Vec<u32> {
        &mut self.rows[index]
    }

    /// Cell lookup by feature name; None if the feature is not temporal.
    pub fn value(&self, catalog: &Catalog, feature: &str, interval: usize) -> Option<u32> {
        catalog.temporal_row(feature).map(|r| self.rows[r][interval])
    }

    fn check_shape(&self, catalog: &Catalog) -> Result<(), TimelineError> {
        if self.rows.len() != catalog.temporal_count() {
            return Err(TimelineError::MatrixShape {
                got: self.rows.len(),
                want: catalog.temporal_count(),
            });
        }
        Ok(())
    }
}

/// Aggregates one patient's visits into a raw activity matrix. Visits
/// outside the window are ignored; binary cells record occurrence (not
/// counts); count cells follow the feature's [`CountSource`].
pub fn aggregate(
    catalog: &Catalog,
    patient_id: &str,
    visits: &[VisitRecord],
    grid: IntervalGrid,
) -> Result<ActivityMatrix, TimelineError> {
    let mut matrix = ActivityMatrix::zeroed(patient_id.to_string(), grid, catalog);
    let temporal: Vec<_> = catalog.temporal_features().collect();
    // (row, interval) -> distinct dates or networks, for the set-valued sources
    let mut distinct: std::collections::BTreeMap<(usize, usize), BTreeSet<String>> =
        std::collections::BTreeMap::new();
    let mut hits = Vec::new();
    for visit in visits {
        if visit.patient_id != patient_id {
            return Err(TimelineError::MixedPatients(
                visit.date,
                visit.patient_id.clone(),
                patient_id.to_string(),
            ));
        }
        let Some(interval) = grid.interval_of(visit.date) else { continue };
        for code in &visit.diagnoses {
            hits.clear();
            catalog.icd_hits(&crate::catalog::normalize_code(code), &mut hits);
            for &row in &hits {
                bump(&mut matrix, &temporal, &mut distinct, row as usize, interval, visit);
            }
        }
        for code in &visit.stops {
            hits.clear();
            catalog.stop_hits(&crate::catalog::normalize_code(code), &mut hits);
            for &row in &hits {
                bump(&mut matrix, &temporal, &mut distinct, row as usize, interval, visit);
            }
        }
        // distinct-network counts accrue from any in-window visit that
        // carries a network id, with no pattern gate
        if let Some(visn) = &visit.visn {
            for (row, f) in temporal.iter().enumerate() {
                if f.kind == ValueKind::Count && f.source == CountSource::DistinctVisns {
                    distinct.entry((row, interval)).or_default().insert(visn.clone());
                }
            }
        }
    }
    for ((row, interval), values) in distinct {
        matrix.rows[row][interval] = values.len() as u32;
    }
    Ok(matrix)
}

fn bump(
    matrix: &mut ActivityMatrix,
    temporal: &[&crate::catalog::FeatureDef],
    distinct: &mut std::collections::BTreeMap<(usize, usize), BTreeSet<String>>,
    row: usize,
    interval: usize,
    visit: &VisitRecord,
) {
    let feature = temporal[row];
    match feature.kind {
        ValueKind::Binary => matrix.rows[row][interval] = 1,
        ValueKind::Count => match feature.source {
            CountSource::Occurrences => matrix.rows[row][interval] += 1,
            CountSource::DistinctDays => {
                distinct.entry((row, interval)).or_default().insert(visit.date.to_string());
            }
            // handled for every visit above, independent of pattern hits
            CountSource::DistinctVisns => {}
        },
        ValueKind::Categorical => unreachable!("categorical features are not temporal"),
    }
}

/// Applies each temporal binary feature's persistence policy to a raw
/// matrix. Count rows are copied unchanged.
pub fn apply_persistence(
    catalog: &Catalog,
    raw: &ActivityMatrix,
) -> Result<ActivityMatrix, TimelineError> {
    if raw.filled {
        return Err(TimelineError::AlreadyFilled);
    }
    raw.check_shape(catalog)?;
    let k = raw.grid.interval_count();
    let mut filled = raw.clone();
    filled.filled = true;
    for (row, feature) in catalog.temporal_features().enumerate() {
        if feature.kind != ValueKind::Binary {
            continue;
        }
        let policy = feature
            .policy
            .expect("catalog validation guarantees temporal binaries carry a policy");
        let src = &raw.rows[row];
        let dst = &mut filled.rows[row];
        match policy {
            PersistencePolicy::Episodic => {}
            PersistencePolicy::ChronicPersistent => {
                if let Some(first) = src.iter().position(|&v| v > 0) {
                    for cell in dst.iter_mut().skip(first) {
                        *cell = 1;
                    }
                }
            }
            PersistencePolicy::EverHistory => {
                if src.iter().any(|&v| v > 0) {
                    dst.fill(1);
                }
            }
            PersistencePolicy::RecurrentTimeLimited { timeout_quarters } => {
                let tail = convert_timeout(timeout_quarters, raw.grid.granularity())? as usize;
                for i in 0..k {
                    if src[i] > 0 {
                        let stop = (i + tail).min(k - 1);
                        for cell in dst.iter_mut().take(stop + 1).skip(i) {
                            *cell = 1;
                        }
                    }
                }
            }
        }
    }
    Ok(filled)
}

/// Writes a feature-by-interval CSV of one matrix, for debugging.
pub fn write_matrix_csv<W: Write>(
    catalog: &Catalog,
    matrix: &ActivityMatrix,
    writer: W,
) -> Result<(), TimelineError> {
    matrix.check_shape(catalog)?;
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["feature".to_string()];
    for i in 0..matrix.grid.interval_count() {
        header.push(matrix.grid.label(i));
    }
    w.write_record(&header)?;
    for (row, feature) in catalog.temporal_features().enumerate() {
        let mut record = vec![feature.name.clone()];
        record.extend(matrix.rows[row].iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_date(text: &str, line: usize) -> Result<NaiveDate, TimelineError> {
    NaiveDate::parse_from_str(text.trim(), "%Y-%m-%d").map_err(|e| TimelineError::VisitParse {
        line,
        message: format!("bad date {text:?}: {e}"),
    })
}

fn split_codes(field: &str) -> Vec<String> {
    field
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Reads the tab-separated visit format: patient_id, date, comma-separated
/// diagnoses, comma-separated stop codes, optional network id.
pub fn read_visits_tsv<R: BufRead>(reader: R) -> Result<Vec<VisitRecord>, TimelineError> {
    let mut visits = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let number = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 || fields.len() > 5 {
            return Err(TimelineError::VisitParse {
                line: number,
                message: format!("expected 4 or 5 tab-separated fields, got {}", fields.len()),
            });
        }
        if fields[0].trim().is_empty() {
            return Err(TimelineError::VisitParse {
                line: number,
                message: "empty patient id".to_string(),
            });
        }
        visits.push(VisitRecord {
            patient_id: fields[0].trim().to_string(),
            date: parse_date(fields[1], number)?,
            diagnoses: split_codes(fields[2]),
            stops: split_codes(fields[3]),
            visn: fields.get(4).map(|s| s.trim()).filter(|s| !s.is_empty()).map(String::from),
        });
    }
    Ok(visits)
}

pub fn write_visits_tsv<W: Write>(visits: &[VisitRecord], mut writer: W) -> Result<(), TimelineError> {
    for v in visits {
        writeln!(
            writer,
            "{}\t{}\t{}\t{}\t{}",
            v.patient_id,
            v.date,
            v.diagnoses.join(","),
            v.stops.join(","),
            v.visn.as_deref().unwrap_or("")
        )?;
    }
    Ok(())
}

/// Reads the columnar CSV variant (header: patient_id,date,diagnoses,stops,
/// visn; list fields comma-separated inside quotes).
pub fn read_visits_csv<R: std::io::Read>(reader: R) -> Result<Vec<VisitRecord>, TimelineError> {
    let mut r = csv::Reader::from_reader(reader);
    let mut visits = Vec::new();
    for (idx, record) in r.records().enumerate() {
        let record = record?;
        let number = idx + 2; // header is line 1
        let get = |i: usize| record.get(i).unwrap_or("");
        if get(0).trim().is_empty() {
            return Err(TimelineError::VisitParse {
                line: number,
                message: "empty patient id".to_string(),
            });
        }
        visits.push(VisitRecord {
            patient_id: get(0).trim().to_string(),
            date: parse_date(get(1), number)?,
            diagnoses: split_codes(get(2)),
            stops: split_codes(get(3)),
            visn: Some(get(4).trim()).filter(|s| !s.is_empty()).map(String::from),
        });
    }
    Ok(visits)
}

/// Loads visits from a path, dispatching on the `.csv` extension.
pub fn read_visits(path: &Path) -> Result<Vec<VisitRecord>, TimelineError> {
    let file = std::fs::File::open(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_visits_csv(file)
    } else {
        read_visits_tsv(std::io::BufReader::new(file))
    }
}

/// Groups a visit stream by patient id, preserving first-seen patient order.
pub fn group_by_patient(visits: Vec<VisitRecord>) -> Vec<(String, Vec<VisitRecord>)> {
    let mut order: Vec<String> = Vec::new();
    let mut map: std::collections::HashMap<String, Vec<VisitRecord>> =
        std::collections::HashMap::new();
    for v in visits {
        if !map.contains_key(&v.patient_id) {
            order.push(v.patient_id.clone());
        }
        map.entry(v.patient_id.clone()).or_default().push(v);
    }
    order
        .into_iter()
        .map(|id| {
            let vs = map.remove(&id).unwrap();
            (id, vs)
        })
        .collect()
}

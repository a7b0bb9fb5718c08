//! Patient profiles and feature-vector representations.
//!
//! Three representations share one canonical column layout derived from
//! catalog declaration order:
//! - `Static`: window-level one-hots; temporal binaries collapse to
//!   any-occurrence over the raw matrix, counts are summed then banded.
//! - `TimeVarying`: one column per temporal feature per interval, read from
//!   the persistence-filled matrix; counts banded per interval.
//! - `TimeVaryingNoFill`: same columns, read from the raw matrix.

pub mod prompt;

use crate::catalog::{Catalog, FeatureDef, ValueKind};
use crate::timeline::{ActivityMatrix, Granularity, TimelineError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RepresentError {
    #[error("patient {patient}: missing value for static feature {feature:?}")]
    MissingAttribute { patient: String, feature: String },
    #[error("patient {patient}: {feature:?} has no level {level:?}")]
    UnknownLevel { patient: String, feature: String, level: String },
    #[error("patient {patient}: unexpected attribute {feature:?} (not a static catalog feature)")]
    UnexpectedAttribute { patient: String, feature: String },
    #[error(transparent)]
    Timeline(#[from] TimelineError),
    #[error("matrix granularity {got:?} does not match layout granularity {want:?}")]
    GranularityMismatch { got: Granularity, want: Granularity },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Window-level attribute of a patient: the categorical level that drives
/// one-hot columns, plus an optional verbatim display string for prompts
/// (e.g. level "30-39", display "32").
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttrValue {
    pub level: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub display: Option<String>,
}

impl AttrValue {
    pub fn level(level: impl Into<String>) -> Self {
        AttrValue { level: level.into(), display: None }
    }

    pub fn shown(&self) -> &str {
        self.display.as_deref().unwrap_or(&self.level)
    }
}

/// Levels accepted for window-level binary features (military history).
pub const BINARY_LEVELS: [&str; 3] = ["yes", "no", "unknown"];

/// Everything needed to represent one patient: window-level attributes plus
/// raw and persistence-filled activity matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientProfile {
    pub patient_id: String,
    pub attributes: BTreeMap<String, AttrValue>,
    pub raw: ActivityMatrix,
    pub filled: ActivityMatrix,
}

impl PatientProfile {
    /// Builds a profile from attributes and the raw matrix, applying the
    /// persistence fill. Every static catalog feature must have an attribute
    /// with a declared level; extras and unknown levels are errors, not
    /// defaults.
    pub fn assemble(
        catalog: &Catalog,
        attributes: BTreeMap<String, AttrValue>,
        raw: ActivityMatrix,
    ) -> Result<Self, RepresentError> {
        let patient_id = raw.patient_id.clone();
        for feature in catalog.features().iter().filter(|f| !f.is_temporal()) {
            let Some(attr) = attributes.get(&feature.name) else {
                return Err(RepresentError::MissingAttribute {
                    patient: patient_id,
                    feature: feature.name.clone(),
                });
            };
            let allowed = match feature.kind {
                ValueKind::Categorical => feature.levels.iter().any(|l| l == &attr.level),
                ValueKind::Binary => BINARY_LEVELS.contains(&attr.level.as_str()),
                ValueKind::Count => unreachable!("counts are temporal"),
            };
            if !allowed {
                return Err(RepresentError::UnknownLevel {
                    patient: patient_id,
                    feature: feature.name.clone(),
                    level: attr.level.clone(),
                });
            }
        }
        for name in attributes.keys() {
            match catalog.get(name) {
                Some(f) if !f.is_temporal() => {}
                _ => {
                    return Err(RepresentError::UnexpectedAttribute {
                        patient: patient_id,
                        feature: name.clone(),
                    })
                }
            }
        }
        let filled = crate::timeline::apply_persistence(catalog, &raw)?;
        Ok(PatientProfile { patient_id, attributes, raw, filled })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    Static,
    TimeVarying,
    TimeVaryingNoFill,
}

impl Representation {
    pub fn is_temporal(self) -> bool {
        !matches!(self, Representation::Static)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum ColumnSource {
    /// 1 iff the attribute's level equals this declared level.
    AttrLevel { feature: usize, level: usize },
    /// Window-level binary: 1 iff the attribute level is "yes".
    StaticFlag { feature: usize },
    /// 1 iff the raw matrix row has any occurrence.
    AnyOccurrence { row: usize },
    /// Cell of the chosen matrix (filled or raw).
    ActiveAt { row: usize, interval: usize },
    /// One-hot of the banded summed count.
    BandTotal { row: usize, feature: usize, band: usize },
    /// One-hot of the banded per-interval count.
    BandAt { row: usize, feature: usize, band: usize, interval: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnSpec {
    pub name: String,
    source: ColumnSource,
}

/// Canonical column layout for one representation of one catalog.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorLayout {
    pub representation: Representation,
    pub granularity: Granularity,
    columns: Vec<ColumnSpec>,
}

impl VectorLayout {
    pub fn new(catalog: &Catalog, representation: Representation, granularity: Granularity) -> Self {
        let k = granularity.intervals_per_year();
        let mut columns = Vec::new();
        let mut row = 0usize;
        for (fi, f) in catalog.features().iter().enumerate() {
            match (f.is_temporal(), f.kind) {
                (false, ValueKind::Categorical) => {
                    for (li, level) in f.levels.iter().enumerate() {
                        columns.push(ColumnSpec {
                            name: format!("{}_{}", f.slug, crate::catalog::slugify(level)),
                            source: ColumnSource::AttrLevel { feature: fi, level: li },
                        });
                    }
                }
                (false, ValueKind::Binary) => {
                    columns.push(ColumnSpec {
                        name: f.slug.clone(),
                        source: ColumnSource::StaticFlag { feature: fi },
                    });
                }
                (true, ValueKind::Binary) => {
                    if representation.is_temporal() {
                        for i in 0..k {
                            columns.push(ColumnSpec {
                                name: format!("{}_{}", f.slug, granularity.label(i)),
                                source: ColumnSource::ActiveAt { row, interval: i },
                            });
                        }
                    } else {
                        columns.push(ColumnSpec {
                            name: f.slug.clone(),
                            source: ColumnSource::AnyOccurrence { row },
                        });
                    }
                    row += 1;
                }
                (true, ValueKind::Count) => {
                    for band in 0..f.bands.len() {
                        if representation.is_temporal() {
                            for i in 0..k {
                                columns.push(ColumnSpec {
                                    name: format!(
                                        "{}_{}_{}",
                                        f.slug,
                                        f.band_label(band),
                                        granularity.label(i)
                                    ),
                                    source: ColumnSource::BandAt {
                                        row,
                                        feature: fi,
                                        band,
                                        interval: i,
                                    },
                                });
                            }
                        } else {
                            columns.push(ColumnSpec {
                                name: format!("{}_{}", f.slug, f.band_label(band)),
                                source: ColumnSource::BandTotal { row, feature: fi, band },
                            });
                        }
                    }
                    row += 1;
                }
                _ => unreachable!("validated catalogs have no other shapes"),
            }
        }
        VectorLayout { representation, granularity, columns }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

/// One patient's values under a shared layout.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub patient_id: String,
    pub layout: Arc<VectorLayout>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn entries(&self) -> impl Iterator<Item = (&str, f64)> {
        self.layout.columns.iter().map(|c| c.name.as_str()).zip(self.values.iter().copied())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.layout.position(name).map(|i| self.values[i])
    }
}

/// Builds one patient's vector under `layout`.
pub fn build_vector(
    catalog: &Catalog,
    profile: &PatientProfile,
    layout: &Arc<VectorLayout>,
) -> Result<FeatureVector, RepresentError> {
    let matrix = match layout.representation {
        Representation::Static | Representation::TimeVaryingNoFill => &profile.raw,
        Representation::TimeVarying => &profile.filled,
    };
    if matrix.grid.granularity() != layout.granularity {
        return Err(RepresentError::GranularityMismatch {
            got: matrix.grid.granularity(),
            want: layout.granularity,
        });
    }
    let features = catalog.features();
    let attr = |fi: usize| -> &AttrValue {
        profile
            .attributes
            .get(&features[fi].name)
            .expect("profile assembly validated attribute coverage")
    };
    let values = layout
        .columns
        .iter()
        .map(|col| match col.source {
            ColumnSource::AttrLevel { feature, level } => {
                f64::from(attr(feature).level == features[feature].levels[level])
            }
            ColumnSource::StaticFlag { feature } => f64::from(attr(feature).level == "yes"),
            ColumnSource::AnyOccurrence { row } => {
                f64::from(profile.raw.row(row).iter().any(|&v| v > 0))
            }
            ColumnSource::ActiveAt { row, interval } => f64::from(matrix.row(row)[interval] > 0),
            ColumnSource::BandTotal { row, feature, band } => {
                let total: u32 = profile.raw.row(row).iter().sum();
                f64::from(features[feature].band_of(total) == band)
            }
            ColumnSource::BandAt { row, feature, band, interval } => {
                f64::from(features[feature].band_of(profile.raw.row(row)[interval]) == band)
            }
        })
        .collect();
    Ok(FeatureVector {
        patient_id: profile.patient_id.clone(),
        layout: Arc::clone(layout),
        values,
    })
}

/// Convenience: build the three standard representations' layouts at once.
pub fn standard_layouts(
    catalog: &Catalog,
    granularity: Granularity,
) -> [Arc<VectorLayout>; 3] {
    [
        Arc::new(VectorLayout::new(catalog, Representation::Static, granularity)),
        Arc::new(VectorLayout::new(catalog, Representation::TimeVarying, granularity)),
        Arc::new(VectorLayout::new(catalog, Representation::TimeVaryingNoFill, granularity)),
    ]
}

/// Writes vectors as CSV: `patient_id` then the layout's columns.
pub fn write_vectors_csv<W: Write>(
    layout: &VectorLayout,
    vectors: &[FeatureVector],
    writer: W,
) -> Result<(), RepresentError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["patient_id"];
    header.extend(layout.names());
    w.write_record(&header)?;
    for v in vectors {
        debug_assert_eq!(v.layout.as_ref(), layout);
        let mut record = vec![v.patient_id.clone()];
        record.extend(v.values.iter().map(|x| format!("{x}")));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a vector CSV back into (header, rows).
pub fn read_vectors_csv<R: std::io::Read>(
    reader: R,
) -> Result<(Vec<String>, Vec<(String, Vec<f64>)>), RepresentError> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> =
        r.headers()?.iter().skip(1).map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        let id = record.get(0).unwrap_or_default().to_string();
        let values: Result<Vec<f64>, _> =
            record.iter().skip(1).map(|s| s.parse::<f64>()).collect();
        let values = values.map_err(|e| {
            RepresentError::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("patient {id}: {e}"),
            ))
        })?;
        rows.push((id, values));
    }
    Ok((header, rows))
}

/// Reads a window-level attributes CSV (header: patient_id then feature
/// names). A cell is a level, optionally followed by `|` and a verbatim
/// prompt display string (e.g. `30-39|32`); levels never contain `|`.
pub fn read_attributes_csv<R: std::io::Read>(
    reader: R,
) -> Result<BTreeMap<String, BTreeMap<String, AttrValue>>, RepresentError> {
    let mut r = csv::Reader::from_reader(reader);
    let names: Vec<String> = r.headers()?.iter().skip(1).map(|s| s.to_string()).collect();
    let mut out = BTreeMap::new();
    for record in r.records() {
        let record = record?;
        let id = record.get(0).unwrap_or_default().to_string();
        let mut attrs = BTreeMap::new();
        for (i, name) in names.iter().enumerate() {
            let cell = record.get(i + 1).unwrap_or_default();
            let attr = match cell.split_once('|') {
                Some((level, display)) if !display.is_empty() => AttrValue {
                    level: level.to_string(),
                    display: Some(display.to_string()),
                },
                Some((level, _)) => AttrValue::level(level),
                None => AttrValue::level(cell),
            };
            attrs.insert(name.clone(), attr);
        }
        out.insert(id, attrs);
    }
    Ok(out)
}

/// Writes the attributes CSV for a set of profiles-like attribute maps.
pub fn write_attributes_csv<W: Write>(
    catalog: &Catalog,
    patients: &[(String, BTreeMap<String, AttrValue>)],
    writer: W,
) -> Result<(), RepresentError> {
    let static_features: Vec<&FeatureDef> =
        catalog.features().iter().filter(|f| !f.is_temporal()).collect();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["patient_id".to_string()];
    header.extend(static_features.iter().map(|f| f.name.clone()));
    w.write_record(&header)?;
    for (id, attrs) in patients {
        let mut record = vec![id.clone()];
        for f in &static_features {
            record.push(attrs.get(&f.name).map_or_else(String::new, |a| match &a.display {
                Some(d) => format!("{}|{}", a.level, d),
                None => a.level.clone(),
            }));
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Groups used for split stratification and fairness: the levels of one
/// static feature per patient.
pub fn attribute_level(
    attrs: &BTreeMap<String, AttrValue>,
    feature: &str,
) -> Option<String> {
    attrs.get(feature).map(|a| a.level.clone())
}

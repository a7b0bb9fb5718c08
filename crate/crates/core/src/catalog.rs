//! Feature catalog: the dictionary that drives aggregation, persistence
//! fill, vector layout and prompt rendering.
//!
//! A catalog is a TOML document with one `[[feature]]` record per predictor.
//! Records are kept in declaration order; that order is the canonical column
//! order of every representation built from the catalog.

use serde::Deserialize;
use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("failed to read catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog is not valid TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("catalog has no features")]
    Empty,
    #[error("duplicate feature name {0:?}")]
    DuplicateName(String),
    #[error("duplicate feature slug {0:?}")]
    DuplicateSlug(String),
    #[error("feature {0:?}: temporal binary features need a persistence policy")]
    MissingPolicy(String),
    #[error("feature {0:?}: policy {1:?} is only valid for temporal binary features")]
    UnexpectedPolicy(String, String),
    #[error("feature {0:?}: recurrent-time-limited policy needs timeout_quarters >= 1")]
    MissingTimeout(String),
    #[error("feature {0:?}: timeout_quarters is only valid with a recurrent-time-limited policy")]
    UnexpectedTimeout(String),
    #[error("feature {0:?}: temporal features need at least one code or stop pattern")]
    NoPatterns(String),
    #[error("feature {0:?}: categorical features need at least two levels")]
    NotEnoughLevels(String),
    #[error("feature {0:?}: duplicate level {1:?}")]
    DuplicateLevel(String, String),
    #[error("feature {0:?}: count features need band edges starting at 0, strictly increasing")]
    BadBands(String),
    #[error("feature {0:?}: {1} features may not declare {2}")]
    FieldNotAllowed(String, &'static str, &'static str),
    #[error("feature {0:?}: empty pattern")]
    EmptyPattern(String),
}

/// Prompt domain and grouping of a feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Deserialize, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainGroup {
    Demographics,
    ServiceUtilization,
    MentalHealth,
    PhysicalHealth,
    SubstanceAbuse,
    MilitaryHistory,
    SocialBehavioral,
}

impl DomainGroup {
    /// Label used for the domain line in rendered prompts.
    pub fn prompt_label(self) -> &'static str {
        match self {
            DomainGroup::Demographics => "demographics",
            DomainGroup::ServiceUtilization => "utilization",
            DomainGroup::MentalHealth => "mental_health_disorders",
            DomainGroup::PhysicalHealth => "physical_health",
            DomainGroup::SubstanceAbuse => "substance_abuse",
            DomainGroup::MilitaryHistory => "military_history",
            DomainGroup::SocialBehavioral => "social_and_behavioral_factors",
        }
    }

    /// Fixed rendering order of prompt domains.
    pub const PROMPT_ORDER: [DomainGroup; 7] = [
        DomainGroup::Demographics,
        DomainGroup::ServiceUtilization,
        DomainGroup::MentalHealth,
        DomainGroup::PhysicalHealth,
        DomainGroup::SubstanceAbuse,
        DomainGroup::MilitaryHistory,
        DomainGroup::SocialBehavioral,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueKind {
    Binary,
    Count,
    Categorical,
}

/// How a condition, once observed, extends through later intervals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PersistencePolicy {
    /// Active in every interval at or after first observation.
    ChronicPersistent,
    /// Active in the observed interval plus the next `timeout_quarters`
    /// (converted to the grid's granularity); re-observation restarts the
    /// clock.
    RecurrentTimeLimited { timeout_quarters: u32 },
    /// Active in every interval of the window, including earlier ones, if
    /// observed anywhere.
    EverHistory,
    /// Raw occurrences only.
    Episodic,
}

impl fmt::Display for PersistencePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PersistencePolicy::ChronicPersistent => write!(f, "chronic-persistent"),
            PersistencePolicy::RecurrentTimeLimited { timeout_quarters } => {
                write!(f, "recurrent-time-limited({timeout_quarters}q)")
            }
            PersistencePolicy::EverHistory => write!(f, "ever-history"),
            PersistencePolicy::Episodic => write!(f, "episodic"),
        }
    }
}

/// What a count feature counts per interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Deserialize, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountSource {
    /// Matching code occurrences.
    #[default]
    Occurrences,
    /// Distinct visit dates with a matching code.
    DistinctDays,
    /// Distinct network ids seen on visits in the interval.
    DistinctVisns,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDef {
    /// Unique identifier, e.g. "Anxiety Disorder".
    pub name: String,
    /// Prompt text, e.g. "Anxiety disorder". Defaults to `name`.
    pub display: String,
    /// Vector column stem, e.g. "anxiety". Defaults to a slugified `name`.
    pub slug: String,
    pub group: DomainGroup,
    pub kind: ValueKind,
    pub policy: Option<PersistencePolicy>,
    /// ICD-10-CM patterns (exact, `%` prefix wildcard, or bare category stem).
    pub code_patterns: Vec<String>,
    /// Clinic stop-code patterns, same grammar.
    pub stop_patterns: Vec<String>,
    /// Declared levels of a categorical feature, in column order.
    pub levels: Vec<String>,
    /// Band lower edges for count features; first edge must be 0.
    pub bands: Vec<u32>,
    pub source: CountSource,
    /// Optional override for ordering inside the prompt's demographic-style
    /// domains; lower ranks render first, unranked features follow in
    /// declaration order.
    pub prompt_rank: Option<u32>,
}

impl FeatureDef {
    /// Counts and diagnosis/social binary features vary per interval;
    /// categoricals and military-history binaries are window-level.
    pub fn is_temporal(&self) -> bool {
        match self.kind {
            ValueKind::Count => true,
            ValueKind::Categorical => false,
            ValueKind::Binary => !matches!(
                self.group,
                DomainGroup::Demographics | DomainGroup::MilitaryHistory
            ),
        }
    }

    /// Band index for a summed or per-interval count.
    pub fn band_of(&self, count: u32) -> usize {
        debug_assert!(!self.bands.is_empty());
        match self.bands.binary_search(&count) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    /// Human-readable label of band `i`, e.g. "0", "1_2", "11_plus".
    pub fn band_label(&self, i: usize) -> String {
        let lo = self.bands[i];
        match self.bands.get(i + 1) {
            Some(&hi) if hi == lo + 1 => format!("{lo}"),
            Some(&hi) => format!("{lo}_{}", hi - 1),
            None => format!("{lo}_plus"),
        }
    }
}

/// Lowercase alphanumeric with single underscores, e.g. "Not Hispanic" ->
/// "not_hispanic", "30-39" -> "30_39", "0%" -> "0".
pub fn slugify(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending = false;
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            if pending && !out.is_empty() {
                out.push('_');
            }
            pending = false;
            out.push(c.to_ascii_lowercase());
        } else {
            pending = true;
        }
    }
    out
}

/// Uppercases and trims a code; the dot is significant and retained.
pub fn normalize_code(code: &str) -> String {
    code.trim().to_ascii_uppercase()
}

/// Pattern match for one normalized code against one normalized pattern.
///
/// Three forms: exact equality; `%` suffix = prefix wildcard ("G43%" matches
/// "G43" and "G43.1", not "G4"); bare stem without dot or wildcard matches
/// itself or any extension at a dot boundary ("F12" matches "F12.10", not
/// "F120").
pub fn match_code(pattern: &str, code: &str) -> bool {
    if let Some(stem) = pattern.strip_suffix('%') {
        return code.starts_with(stem);
    }
    if code == pattern {
        return true;
    }
    if !pattern.contains('.') {
        return code.len() > pattern.len()
            && code.starts_with(pattern)
            && code.as_bytes()[pattern.len()] == b'.';
    }
    false
}

/// Precompiled pattern set mapping codes to feature indices.
#[derive(Debug, Default)]
pub struct CodeMatcher {
    exact: HashMap<String, Vec<u32>>,
    stems: HashMap<String, Vec<u32>>,
    prefixes: Vec<(String, u32)>,
}

impl CodeMatcher {
    fn add(&mut self, pattern: &str, feature: u32) {
        if let Some(stem) = pattern.strip_suffix('%') {
            self.prefixes.push((stem.to_string(), feature));
        } else if pattern.contains('.') {
            self.exact.entry(pattern.to_string()).or_default().push(feature);
        } else {
            self.stems.entry(pattern.to_string()).or_default().push(feature);
        }
    }

    /// Feature indices whose patterns match `code` (normalized by the
    /// caller). Indices may repeat if several patterns of one feature match.
    pub fn hits(&self, code: &str, out: &mut Vec<u32>) {
        if let Some(v) = self.exact.get(code) {
            out.extend_from_slice(v);
        }
        let stem = match code.find('.') {
            Some(dot) => &code[..dot],
            None => code,
        };
        if let Some(v) = self.stems.get(stem) {
            out.extend_from_slice(v);
        }
        for (prefix, feature) in &self.prefixes {
            if code.starts_with(prefix.as_str()) {
                out.push(*feature);
            }
        }
    }
}

#[derive(Debug)]
pub struct Catalog {
    pub version: String,
    features: Vec<FeatureDef>,
    by_name: HashMap<String, usize>,
    /// Indices of temporal features, in declaration order; row order of
    /// activity matrices.
    temporal: Vec<usize>,
    icd_matcher: CodeMatcher,
    stop_matcher: CodeMatcher,
}

impl Catalog {
    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    pub fn parse_str(text: &str) -> Result<Self, CatalogError> {
        let raw: RawCatalog = toml::from_str(text)?;
        for f in &raw.feature {
            if f.timeout_quarters.is_some()
                && !matches!(f.policy, Some(RawPolicy::RecurrentTimeLimited))
            {
                return Err(CatalogError::UnexpectedTimeout(f.name.clone()));
            }
        }
        Self::from_defs(raw.version, raw.feature.into_iter().map(RawFeature::into_def))
    }

    pub fn from_defs(
        version: String,
        defs: impl IntoIterator<Item = FeatureDef>,
    ) -> Result<Self, CatalogError> {
        let features: Vec<FeatureDef> = defs.into_iter().collect();
        if features.is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut by_name = HashMap::new();
        let mut by_slug = HashMap::new();
        for (i, f) in features.iter().enumerate() {
            validate_feature(f)?;
            if by_name.insert(f.name.clone(), i).is_some() {
                return Err(CatalogError::DuplicateName(f.name.clone()));
            }
            if by_slug.insert(f.slug.clone(), i).is_some() {
                return Err(CatalogError::DuplicateSlug(f.slug.clone()));
            }
        }
        let temporal: Vec<usize> =
            (0..features.len()).filter(|&i| features[i].is_temporal()).collect();
        let mut icd_matcher = CodeMatcher::default();
        let mut stop_matcher = CodeMatcher::default();
        for (row, &i) in temporal.iter().enumerate() {
            for p in &features[i].code_patterns {
                icd_matcher.add(p, row as u32);
            }
            for p in &features[i].stop_patterns {
                stop_matcher.add(p, row as u32);
            }
        }
        Ok(Catalog { version, features, by_name, temporal, icd_matcher, stop_matcher })
    }

    pub fn features(&self) -> &[FeatureDef] {
        &self.features
    }

    pub fn get(&self, name: &str) -> Option<&FeatureDef> {
        self.by_name.get(name).map(|&i| &self.features[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    /// Temporal features in matrix row order.
    pub fn temporal_features(&self) -> impl Iterator<Item = &FeatureDef> {
        self.temporal.iter().map(|&i| &self.features[i])
    }

    pub fn temporal_count(&self) -> usize {
        self.temporal.len()
    }

    /// Matrix row of a temporal feature.
    pub fn temporal_row(&self, name: &str) -> Option<usize> {
        let idx = *self.by_name.get(name)?;
        self.temporal.iter().position(|&i| i == idx)
    }

    /// Rows of temporal features whose ICD patterns match `code`.
    pub fn icd_hits(&self, code: &str, out: &mut Vec<u32>) {
        self.icd_matcher.hits(code, out);
    }

    /// Rows of temporal features whose stop-code patterns match `code`.
    pub fn stop_hits(&self, code: &str, out: &mut Vec<u32>) {
        self.stop_matcher.hits(code, out);
    }

    /// All temporal-feature rows touched by one visit's code lists.
    /// Returned rows are deduplicated and sorted.
    pub fn categorize(&self, diagnoses: &[String], stops: &[String]) -> Vec<u32> {
        let mut rows = Vec::new();
        for code in diagnoses {
            self.icd_hits(&normalize_code(code), &mut rows);
        }
        for code in stops {
            self.stop_hits(&normalize_code(code), &mut rows);
        }
        rows.sort_unstable();
        rows.dedup();
        rows
    }
}

fn validate_feature(f: &FeatureDef) -> Result<(), CatalogError> {
    let name = || f.name.clone();
    for p in f.code_patterns.iter().chain(&f.stop_patterns) {
        if p.is_empty() || p == "%" {
            return Err(CatalogError::EmptyPattern(name()));
        }
    }
    match f.policy {
        Some(PersistencePolicy::RecurrentTimeLimited { timeout_quarters }) => {
            if timeout_quarters == 0 {
                return Err(CatalogError::MissingTimeout(name()));
            }
        }
        _ => {}
    }
    match f.kind {
        ValueKind::Binary => {
            if !f.levels.is_empty() {
                return Err(CatalogError::FieldNotAllowed(name(), "binary", "levels"));
            }
            if !f.bands.is_empty() {
                return Err(CatalogError::FieldNotAllowed(name(), "binary", "bands"));
            }
            if f.is_temporal() {
                if f.policy.is_none() {
                    return Err(CatalogError::MissingPolicy(name()));
                }
                if f.code_patterns.is_empty() && f.stop_patterns.is_empty() {
                    return Err(CatalogError::NoPatterns(name()));
                }
            } else if let Some(p) = f.policy {
                return Err(CatalogError::UnexpectedPolicy(name(), p.to_string()));
            }
        }
        ValueKind::Count => {
            if let Some(p) = f.policy {
                return Err(CatalogError::UnexpectedPolicy(name(), p.to_string()));
            }
            if !f.levels.is_empty() {
                return Err(CatalogError::FieldNotAllowed(name(), "count", "levels"));
            }
            if f.bands.is_empty() || f.bands[0] != 0 || f.bands.windows(2).any(|w| w[0] >= w[1]) {
                return Err(CatalogError::BadBands(name()));
            }
            if f.source == CountSource::Occurrences || f.source == CountSource::DistinctDays {
                if f.code_patterns.is_empty() && f.stop_patterns.is_empty() {
                    return Err(CatalogError::NoPatterns(name()));
                }
            }
        }
        ValueKind::Categorical => {
            if let Some(p) = f.policy {
                return Err(CatalogError::UnexpectedPolicy(name(), p.to_string()));
            }
            if !f.bands.is_empty() {
                return Err(CatalogError::FieldNotAllowed(name(), "categorical", "bands"));
            }
            if !f.code_patterns.is_empty() || !f.stop_patterns.is_empty() {
                return Err(CatalogError::FieldNotAllowed(name(), "categorical", "patterns"));
            }
            if f.levels.len() < 2 {
                return Err(CatalogError::NotEnoughLevels(name()));
            }
            let mut seen = std::collections::HashSet::new();
            for level in &f.levels {
                if !seen.insert(slugify(level)) {
                    return Err(CatalogError::DuplicateLevel(name(), level.clone()));
                }
            }
        }
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCatalog {
    version: String,
    feature: Vec<RawFeature>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
struct RawFeature {
    name: String,
    display: Option<String>,
    slug: Option<String>,
    group: DomainGroup,
    kind: ValueKind,
    policy: Option<RawPolicy>,
    timeout_quarters: Option<u32>,
    #[serde(default)]
    icd10: Vec<String>,
    #[serde(default)]
    stop: Vec<String>,
    #[serde(default)]
    levels: Vec<String>,
    #[serde(default)]
    bands: Vec<u32>,
    #[serde(default)]
    source: CountSource,
    prompt_rank: Option<u32>,
}

#[derive(Deserialize, Clone, Copy)]
#[serde(rename_all = "kebab-case")]
enum RawPolicy {
    ChronicPersistent,
    RecurrentTimeLimited,
    EverHistory,
    Episodic,
}

impl RawFeature {
    fn into_def(self) -> FeatureDef {
        let policy = match self.policy {
            Some(RawPolicy::ChronicPersistent) => Some(PersistencePolicy::ChronicPersistent),
            Some(RawPolicy::RecurrentTimeLimited) => Some(PersistencePolicy::RecurrentTimeLimited {
                // 0 fails validation as a missing timeout
                timeout_quarters: self.timeout_quarters.unwrap_or(0),
            }),
            Some(RawPolicy::EverHistory) => Some(PersistencePolicy::EverHistory),
            Some(RawPolicy::Episodic) => Some(PersistencePolicy::Episodic),
            None => None,
        };
        let display = self.display.unwrap_or_else(|| self.name.clone());
        let slug = self.slug.unwrap_or_else(|| slugify(&self.name));
        FeatureDef {
            name: self.name,
            display,
            slug,
            group: self.group,
            kind: self.kind,
            policy,
            code_patterns: self.icd10.iter().map(|c| normalize_code(c)).collect(),
            stop_patterns: self.stop.iter().map(|c| normalize_code(c)).collect(),
            levels: self.levels,
            bands: self.bands,
            source: self.source,
            prompt_rank: self.prompt_rank,
        }
    }
}

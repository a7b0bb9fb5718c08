//! Text rendering of patient profiles.
//!
//! Grammar, fixed across catalogs:
//!
//! ```text
//! Patient Information:
//! demographics: {Gender: male, Age: 32};
//! utilization: {Q1: Primary care visits: 3};
//! mental_health_disorders: {H1-H2: Anxiety disorder};
//! physical_health: {H1: Influenza; H1-H2: Cancer};
//! social_and_behavioral_factors: {H1-H2: Legal problems}.
//!
//! Task: Given the patient information, predict yes if this patient will be
//! homeless in the next 3 months, no otherwise.
//! ```
//!
//! Domains render in a fixed order and are omitted when empty; the last
//! emitted domain line ends with a period, the others with semicolons.
//! Window-level categorical features always render `Display: value`
//! (including "unknown"); window-level binaries render name-only when
//! present. Temporal features are read from the persistence-filled matrix:
//! each feature's maximal runs of consecutive active intervals become
//! period groups ("H2", "Q1-Q3"), groups are ordered by (start, end), and
//! display names sort alphabetically within a group. Count features render
//! `Display: value` per interval with nonzero counts, uncompressed.

use crate::catalog::{Catalog, DomainGroup, FeatureDef, ValueKind};
use crate::represent::{PatientProfile, RepresentError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

/// Prediction horizons the task sentence accepts, in months.
pub const WINDOWS_MONTHS: [u32; 4] = [3, 6, 9, 12];

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("unsupported prediction window: {0} months (expected one of 3, 6, 9, 12)")]
    BadWindow(u32),
    #[error(transparent)]
    Represent(#[from] RepresentError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Jsonl { line: usize, source: serde_json::Error },
}

/// A rendered prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptDoc {
    pub patient_id: String,
    pub window_months: u32,
    pub text: String,
}

/// Orders features inside demographic-style domains: explicit prompt rank
/// first, then declaration order.
fn prompt_order(features: &[(usize, &FeatureDef)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..features.len()).collect();
    idx.sort_by_key(|&i| (features[i].1.prompt_rank.unwrap_or(u32::MAX), features[i].0));
    idx
}

/// Maximal runs of consecutive active intervals: (start, end) inclusive.
fn runs(cells: &[u32]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in cells.iter().enumerate() {
        match (v > 0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, cells.len() - 1));
    }
    out
}

fn period_label(grid: &crate::timeline::IntervalGrid, start: usize, end: usize) -> String {
    if start == end {
        grid.label(start)
    } else {
        format!("{}-{}", grid.label(start), grid.label(end))
    }
}

fn render_domain(
    catalog: &Catalog,
    profile: &PatientProfile,
    group: DomainGroup,
) -> Option<String> {
    let members: Vec<(usize, &FeatureDef)> = catalog
        .features()
        .iter()
        .enumerate()
        .filter(|(_, f)| f.group == group)
        .collect();
    if members.is_empty() {
        return None;
    }

    // window-level entries: categorical always, binary only when "yes"
    let mut static_entries: Vec<String> = Vec::new();
    for &i in &prompt_order(&members) {
        let (_, f) = members[i];
        if f.is_temporal() {
            continue;
        }
        let attr = profile
            .attributes
            .get(&f.name)
            .expect("profile assembly validated attribute coverage");
        match f.kind {
            ValueKind::Categorical => static_entries.push(format!("{}: {}", f.display, attr.shown())),
            ValueKind::Binary => {
                if attr.level == "yes" {
                    static_entries.push(f.display.clone());
                }
            }
            ValueKind::Count => unreachable!(),
        }
    }

    // temporal entries grouped by period label
    let grid = &profile.filled.grid;
    let mut groups: BTreeMap<(usize, usize), Vec<String>> = BTreeMap::new();
    for (_, f) in &members {
        if !f.is_temporal() {
            continue;
        }
        let row = catalog.temporal_row(&f.name).expect("temporal member");
        match f.kind {
            ValueKind::Binary => {
                for (start, end) in runs(profile.filled.row(row)) {
                    groups.entry((start, end)).or_default().push(f.display.clone());
                }
            }
            ValueKind::Count => {
                for (i, &v) in profile.filled.row(row).iter().enumerate() {
                    if v > 0 {
                        groups.entry((i, i)).or_default().push(format!("{}: {}", f.display, v));
                    }
                }
            }
            ValueKind::Categorical => unreachable!(),
        }
    }

    let mut parts: Vec<String> = Vec::new();
    if !static_entries.is_empty() {
        parts.push(static_entries.join(", "));
    }
    for ((start, end), mut entries) in groups {
        entries.sort();
        parts.push(format!("{}: {}", period_label(grid, start, end), entries.join(", ")));
    }
    if parts.is_empty() {
        return None;
    }
    Some(format!("{}: {{{}}}", group.prompt_label(), parts.join("; ")))
}

/// Renders the prompt for one profile and prediction window.
pub fn render_prompt(
    catalog: &Catalog,
    profile: &PatientProfile,
    window_months: u32,
) -> Result<PromptDoc, PromptError> {
    if !WINDOWS_MONTHS.contains(&window_months) {
        return Err(PromptError::BadWindow(window_months));
    }
    let mut lines: Vec<String> = vec!["Patient Information:".to_string()];
    let domain_lines: Vec<String> = DomainGroup::PROMPT_ORDER
        .iter()
        .filter_map(|&g| render_domain(catalog, profile, g))
        .collect();
    let n = domain_lines.len();
    for (i, line) in domain_lines.into_iter().enumerate() {
        let terminator = if i + 1 == n { '.' } else { ';' };
        lines.push(format!("{line}{terminator}"));
    }
    let mut text = lines.join("\n");
    text.push_str(&format!(
        "\n\nTask: Given the patient information, predict yes if this patient will be homeless in the next {window_months} months, no otherwise."
    ));
    Ok(PromptDoc { patient_id: profile.patient_id.clone(), window_months, text })
}

/// Writes prompts as JSON lines.
pub fn write_prompts_jsonl<W: Write>(docs: &[PromptDoc], mut writer: W) -> Result<(), PromptError> {
    for doc in docs {
        serde_json::to_writer(&mut writer, doc)
            .map_err(|e| PromptError::Io(std::io::Error::other(e)))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads prompts back from JSON lines.
pub fn read_prompts_jsonl<R: std::io::BufRead>(reader: R) -> Result<Vec<PromptDoc>, PromptError> {
    let mut docs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        docs.push(
            serde_json::from_str(&line).map_err(|source| PromptError::Jsonl { line: idx + 1, source })?,
        );
    }
    Ok(docs)
}

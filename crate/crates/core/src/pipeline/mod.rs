//! Training pipeline: splits, downsampling, elastic-net grid search, and
//! score ingestion for models trained elsewhere.

pub mod ablation;
pub mod elastic_net;
pub mod split;

pub use ablation::{run_ablation, AblationReport, ArmResult};
pub use elastic_net::{predict_proba, train_elastic_net, ModelParams, TrainedModel};
pub use split::{
    downsample_train, split, DownsampleReport, SplitAssignment, SplitLabel, StratifiedPatient,
};

use crate::eval::{pr_auc, EvalError};
use crate::par;
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("need at least 100 patients to split, found {0}")]
    TooFewPatients(usize),
    #[error("duplicate patient id {0:?}")]
    DuplicateId(String),
    #[error("matrix has {rows} rows but {labels} labels")]
    ShapeMismatch { rows: usize, labels: usize },
    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),
    #[error("bad hyperparameter: {0}")]
    BadHyper(String),
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("unknown patient id {0:?}")]
    UnknownPatient(String),
    #[error("score {score} for {patient_id:?} is outside [0, 1]")]
    ScoreOutOfRange { patient_id: String, score: f64 },
    #[error("bad file: {0}")]
    BadFile(String),
    #[error("cohort: {0}")]
    Cohort(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl PipelineError {
    pub(crate) fn io(e: std::io::Error) -> Self {
        PipelineError::Io(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub c_values: Vec<f64>,
    pub l1_ratios: Vec<f64>,
    pub max_iter: usize,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            c_values: vec![0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0],
            l1_ratios: vec![0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0],
            max_iter: 300,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub c: f64,
    pub l1_ratio: f64,
    pub validation_pr_auc: f64,
    pub converged: bool,
    pub nonzero_weights: usize,
}

#[derive(Debug)]
pub struct GridSearchResult {
    pub best: TrainedModel,
    pub best_validation_pr_auc: f64,
    /// One row per configuration, in grid order (C-major).
    pub leaderboard: Vec<LeaderboardRow>,
}

/// Trains every (C, l1_ratio) configuration and keeps the one with the
/// highest validation PR-AUC; ties go to the smaller C, then smaller
/// l1_ratio.
pub fn grid_search(
    train_x: ArrayView2<'_, f64>,
    names: &[String],
    train_y: &[bool],
    val_x: ArrayView2<'_, f64>,
    val_y: &[bool],
    grid: &HyperGrid,
) -> Result<GridSearchResult, PipelineError> {
    if grid.c_values.is_empty() || grid.l1_ratios.is_empty() {
        return Err(PipelineError::EmptyGrid);
    }
    let configs: Vec<(f64, f64)> = grid
        .c_values
        .iter()
        .flat_map(|&c| grid.l1_ratios.iter().map(move |&l1| (c, l1)))
        .collect();

    let outcomes: Vec<Result<(TrainedModel, f64), PipelineError>> =
        par::map_indexed(configs.len(), |k| {
            let (c, l1) = configs[k];
            let model = train_elastic_net(train_x, names, train_y, c, l1, grid.max_iter)?;
            let scores = predict_proba(val_x, names, &model.params)?;
            let val = pr_auc(&scores, val_y)?;
            Ok((model, val))
        });

    let mut leaderboard = Vec::with_capacity(configs.len());
    let mut best: Option<(TrainedModel, f64)> = None;
    for outcome in outcomes {
        let (model, val) = outcome?;
        leaderboard.push(LeaderboardRow {
            c: model.params.c,
            l1_ratio: model.params.l1_ratio,
            validation_pr_auc: val,
            converged: model.converged,
            nonzero_weights: model.params.nonzero_weights(),
        });
        let better = match &best {
            None => true,
            Some((cur, cur_val)) => {
                val > *cur_val
                    || (val == *cur_val
                        && (model.params.c < cur.params.c
                            || (model.params.c == cur.params.c
                                && model.params.l1_ratio < cur.params.l1_ratio)))
            }
        };
        if better {
            best = Some((model, val));
        }
    }
    let (best, best_validation_pr_auc) = best.expect("grid is non-empty");
    Ok(GridSearchResult { best, best_validation_pr_auc, leaderboard })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    NativeBaseline,
    External(String),
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::NativeBaseline => f.write_str("native-baseline"),
            Provenance::External(name) => write!(f, "external:{name}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub provenance: Provenance,
    pub scores: BTreeMap<String, f64>,
}

/// Reads a `patient_id,score` CSV, checking ids against the cohort and
/// scores against [0, 1].
pub fn ingest_scores<R: BufRead>(
    reader: R,
    cohort_ids: &BTreeSet<String>,
    provenance: Provenance,
) -> Result<ScoreSet, PipelineError> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()
        .map_err(PipelineError::io)?
        .ok_or_else(|| PipelineError::BadFile("empty score file".into()))?;
    if header.trim() != "patient_id,score" {
        return Err(PipelineError::BadFile(format!(
            "expected header patient_id,score, found {header:?}"
        )));
    }
    let mut scores = BTreeMap::new();
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(PipelineError::io)?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, raw) = line
            .split_once(',')
            .ok_or_else(|| PipelineError::BadFile(format!("line {}: missing comma", idx + 2)))?;
        let score: f64 = raw.trim().parse().map_err(|_| {
            PipelineError::BadFile(format!("line {}: unparsable score {raw:?}", idx + 2))
        })?;
        if !cohort_ids.contains(id) {
            return Err(PipelineError::UnknownPatient(id.to_string()));
        }
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(PipelineError::ScoreOutOfRange { patient_id: id.to_string(), score });
        }
        if scores.insert(id.to_string(), score).is_some() {
            return Err(PipelineError::DuplicateId(id.to_string()));
        }
    }
    Ok(ScoreSet { provenance, scores })
}

pub fn write_scores_csv<W: Write>(scores: &ScoreSet, mut writer: W) -> Result<(), PipelineError> {
    writeln!(writer, "patient_id,score").map_err(PipelineError::io)?;
    for (id, score) in &scores.scores {
        writeln!(writer, "{id},{score}").map_err(PipelineError::io)?;
    }
    Ok(())
}

const MODEL_MAGIC: &str = "cohortcast-model v1";

/// Versioned text artifact: hyperparameters, fit diagnostics, intercept,
/// then one `w <name> <value>` line per feature. Floats round-trip.
pub fn save_model<W: Write>(model: &TrainedModel, mut writer: W) -> Result<(), PipelineError> {
    let p = &model.params;
    for name in p.weights.keys() {
        if name.chars().any(char::is_whitespace) || name.is_empty() {
            return Err(PipelineError::FeatureMismatch(format!(
                "feature name {name:?} cannot be serialized"
            )));
        }
    }
    writeln!(writer, "{MODEL_MAGIC}").map_err(PipelineError::io)?;
    writeln!(writer, "c {}", p.c).map_err(PipelineError::io)?;
    writeln!(writer, "l1_ratio {}", p.l1_ratio).map_err(PipelineError::io)?;
    writeln!(writer, "max_iter {}", p.max_iter).map_err(PipelineError::io)?;
    writeln!(writer, "converged {}", model.converged).map_err(PipelineError::io)?;
    writeln!(writer, "epochs {}", model.epochs).map_err(PipelineError::io)?;
    writeln!(writer, "final_objective {}", model.final_objective).map_err(PipelineError::io)?;
    writeln!(writer, "intercept {}", p.intercept).map_err(PipelineError::io)?;
    for (name, weight) in &p.weights {
        writeln!(writer, "w {name} {weight}").map_err(PipelineError::io)?;
    }
    Ok(())
}

pub fn load_model<R: BufRead>(reader: R) -> Result<TrainedModel, PipelineError> {
    let bad = |msg: String| PipelineError::BadFile(msg);
    let mut lines = reader.lines();
    let magic = lines
        .next()
        .transpose()
        .map_err(PipelineError::io)?
        .ok_or_else(|| bad("empty model file".into()))?;
    if magic.trim() != MODEL_MAGIC {
        return Err(bad(format!("unsupported model format {magic:?}")));
    }
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    let mut weights = BTreeMap::new();
    for line in lines {
        let line = line.map_err(PipelineError::io)?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, ' ');
        let key = parts.next().unwrap_or_default();
        let rest = parts.next().unwrap_or_default();
        if key == "w" {
            let (name, value) = rest
                .rsplit_once(' ')
                .ok_or_else(|| bad(format!("bad weight line {line:?}")))?;
            let value: f64 =
                value.parse().map_err(|_| bad(format!("bad weight value {value:?}")))?;
            if weights.insert(name.to_string(), value).is_some() {
                return Err(PipelineError::DuplicateId(name.to_string()));
            }
        } else {
            fields.insert(key.to_string(), rest.to_string());
        }
    }
    let take = |key: &str| {
        fields
            .get(key)
            .cloned()
            .ok_or_else(|| bad(format!("missing field {key}")))
    };
    let parse_f64 = |key: &str| -> Result<f64, PipelineError> {
        take(key)?.parse().map_err(|_| bad(format!("bad {key}")))
    };
    Ok(TrainedModel {
        params: ModelParams {
            weights,
            intercept: parse_f64("intercept")?,
            c: parse_f64("c")?,
            l1_ratio: parse_f64("l1_ratio")?,
            max_iter: take("max_iter")?.parse().map_err(|_| bad("bad max_iter".into()))?,
        },
        converged: take("converged")? == "true",
        epochs: take("epochs")?.parse().map_err(|_| bad("bad epochs".into()))?,
        final_objective: parse_f64("final_objective")?,
        objective_trace: Vec::new(),
    })
}

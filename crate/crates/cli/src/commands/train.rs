use crate::config::{self, Config};
use crate::manifest::Manifest;
use anyhow::{bail, Context, Result};
use clap::Args as ClapArgs;
use cohortcast_core::pipeline::{
    grid_search, predict_proba, save_model, HyperGrid, Provenance, ScoreSet, SplitAssignment,
    SplitLabel,
};
use cohortcast_core::synth::{labels_for_window, read_labels_csv};
use ndarray::Array2;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::PathBuf;

#[derive(ClapArgs)]
pub struct Args {
    /// Feature vectors CSV (from `features`)
    #[arg(long, value_name = "FILE")]
    vectors: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    /// Partition file (from `split`)
    #[arg(long, value_name = "FILE")]
    split: Option<PathBuf>,
    /// Restrict training rows to these ids (e.g. retained.csv)
    #[arg(long, value_name = "FILE")]
    retained: Option<PathBuf>,
    /// Label window in months
    #[arg(long)]
    window_months: Option<u32>,
    /// Inverse regularization strengths, comma-separated
    #[arg(long)]
    c_values: Option<String>,
    /// Elastic-net mixing weights, comma-separated
    #[arg(long)]
    l1_ratios: Option<String>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Directory for model.txt, leaderboard.csv, scores_test.csv
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

/// Vectors CSV: `patient_id` then one numeric column per feature.
fn read_vectors(path: &PathBuf) -> Result<(Vec<String>, BTreeMap<String, Vec<f64>>)> {
    let mut lines = crate::commands::open(path)?.lines();
    let header = lines
        .next()
        .transpose()?
        .with_context(|| format!("{} is empty", path.display()))?;
    let mut fields = header.split(',');
    if fields.next() != Some("patient_id") {
        bail!("{}: first column must be patient_id", path.display());
    }
    let names: Vec<String> = fields.map(str::to_string).collect();
    let mut rows = BTreeMap::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or_default().to_string();
        let values: Vec<f64> = fields
            .map(|v| {
                v.parse::<f64>()
                    .with_context(|| format!("line {}: bad value {v:?}", idx + 2))
            })
            .collect::<Result<_>>()?;
        if values.len() != names.len() {
            bail!(
                "line {}: {} values for {} features",
                idx + 2,
                values.len(),
                names.len()
            );
        }
        if rows.insert(id.clone(), values).is_some() {
            bail!("duplicate patient id {id:?} in {}", path.display());
        }
    }
    Ok((names, rows))
}

fn matrix_for(
    ids: &[String],
    rows: &BTreeMap<String, Vec<f64>>,
    labels: &BTreeMap<String, bool>,
    width: usize,
) -> Result<(Array2<f64>, Vec<bool>)> {
    let mut flat = Vec::with_capacity(ids.len() * width);
    let mut y = Vec::with_capacity(ids.len());
    for id in ids {
        let row = rows
            .get(id)
            .with_context(|| format!("patient {id:?} has no feature vector"))?;
        flat.extend_from_slice(row);
        y.push(*labels.get(id).with_context(|| format!("patient {id:?} has no label"))?);
    }
    Ok((Array2::from_shape_vec((ids.len(), width), flat)?, y))
}

pub fn run(args: Args, config: &Config) -> Result<()> {
    let section = config.section("train");
    let vectors_path =
        config::require(args.vectors, section.path("vectors")?, "vectors", "train")?;
    let labels_path = config::require(args.labels, section.path("labels")?, "labels", "train")?;
    let split_path = config::require(args.split, section.path("split")?, "split", "train")?;
    let retained_path = args.retained.or(section.path("retained")?);
    let window_months = config::require(
        args.window_months,
        section.u32("window_months")?,
        "window-months",
        "train",
    )?;
    let defaults = HyperGrid::default();
    let grid = HyperGrid {
        c_values: match args.c_values {
            Some(text) => config::parse_f64_list(&text)?,
            None => section.f64_list("c_values")?.unwrap_or(defaults.c_values),
        },
        l1_ratios: match args.l1_ratios {
            Some(text) => config::parse_f64_list(&text)?,
            None => section.f64_list("l1_ratios")?.unwrap_or(defaults.l1_ratios),
        },
        max_iter: config::or_default(args.max_iter, section.usize("max_iter")?, defaults.max_iter),
    };
    let out_dir = config::require(args.out_dir, section.path("out_dir")?, "out-dir", "train")?;

    let (names, rows) = read_vectors(&vectors_path)?;
    let labels = read_labels_csv(crate::commands::open(&labels_path)?)?;
    let labels = labels_for_window(&labels, window_months)?;
    let assignment = SplitAssignment::read_csv(crate::commands::open(&split_path)?, 0)?;

    let mut train_ids = assignment.ids_in(SplitLabel::Train);
    if let Some(path) = &retained_path {
        let keep: BTreeSet<String> = crate::commands::open(path)?
            .lines()
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .skip(1) // patient_id header
            .filter(|l| !l.trim().is_empty())
            .collect();
        train_ids.retain(|id| keep.contains(id));
        if train_ids.is_empty() {
            bail!("no training rows left after applying {}", path.display());
        }
    }
    let val_ids = assignment.ids_in(SplitLabel::Validation);
    let test_ids = assignment.ids_in(SplitLabel::Test);

    let (train_x, train_y) = matrix_for(&train_ids, &rows, &labels, names.len())?;
    let (val_x, val_y) = matrix_for(&val_ids, &rows, &labels, names.len())?;
    let (test_x, test_y) = matrix_for(&test_ids, &rows, &labels, names.len())?;

    let result = grid_search(train_x.view(), &names, &train_y, val_x.view(), &val_y, &grid)?;
    let test_scores = predict_proba(test_x.view(), &names, &result.best.params)?;
    let test_pr = cohortcast_core::eval::pr_auc(&test_scores, &test_y)?;

    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let model_path = out_dir.join("model.txt");
    let file =
        File::create(&model_path).with_context(|| format!("creating {}", model_path.display()))?;
    save_model(&result.best, BufWriter::new(file))?;

    let leaderboard_path = out_dir.join("leaderboard.csv");
    let mut file = BufWriter::new(
        File::create(&leaderboard_path)
            .with_context(|| format!("creating {}", leaderboard_path.display()))?,
    );
    writeln!(file, "c,l1_ratio,validation_pr_auc,converged,nonzero_weights")?;
    for row in &result.leaderboard {
        writeln!(
            file,
            "{},{},{},{},{}",
            row.c, row.l1_ratio, row.validation_pr_auc, row.converged, row.nonzero_weights
        )?;
    }
    drop(file);

    let scores_path = out_dir.join("scores_test.csv");
    let score_set = ScoreSet {
        provenance: Provenance::NativeBaseline,
        scores: test_ids.iter().cloned().zip(test_scores).collect(),
    };
    let file =
        File::create(&scores_path).with_context(|| format!("creating {}", scores_path.display()))?;
    cohortcast_core::pipeline::write_scores_csv(&score_set, BufWriter::new(file))?;

    let mut manifest = Manifest::new("train", config);
    manifest.input(&vectors_path)?;
    manifest.input(&labels_path)?;
    manifest.input(&split_path)?;
    if let Some(path) = &retained_path {
        manifest.input(path)?;
    }
    manifest.param("window_months", window_months);
    manifest.param("grid", serde_json::json!({
        "c_values": &grid.c_values, "l1_ratios": &grid.l1_ratios, "max_iter": grid.max_iter
    }));
    manifest.param("rows", serde_json::json!({
        "train": train_ids.len(), "validation": val_ids.len(), "test": test_ids.len()
    }));
    manifest.param("best", serde_json::json!({
        "c": result.best.params.c,
        "l1_ratio": result.best.params.l1_ratio,
        "validation_pr_auc": result.best_validation_pr_auc,
        "test_pr_auc": test_pr,
        "nonzero_weights": result.best.params.nonzero_weights(),
    }));
    manifest.output(&model_path)?;
    manifest.output(&leaderboard_path)?;
    manifest.output(&scores_path)?;
    manifest.write(&out_dir)?;

    println!(
        "best C={} l1_ratio={}: validation PR-AUC {:.4}, test PR-AUC {:.4}",
        result.best.params.c, result.best.params.l1_ratio, result.best_validation_pr_auc, test_pr
    );
    println!("model written to {}", model_path.display());
    Ok(())
}

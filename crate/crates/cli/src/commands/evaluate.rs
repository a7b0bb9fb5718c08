use crate::config::{self, Config};
use crate::manifest::Manifest;
use anyhow::{Context, Result};
use clap::Args as ClapArgs;
use cohortcast_core::eval::report::{
    evaluate, write_pr_curve_csv, write_roc_curve_csv, DEFAULT_TIER_FRACTIONS,
};
use cohortcast_core::eval::bootstrap::DEFAULT_ITERATIONS;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

#[derive(ClapArgs)]
pub struct Args {
    /// `patient_id,score` CSV
    #[arg(long, value_name = "FILE")]
    scores: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    /// Label window in months
    #[arg(long)]
    window_months: Option<u32>,
    /// Bootstrap iterations
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Flag fractions, comma-separated
    #[arg(long)]
    tier_fractions: Option<String>,
    /// Score source recorded in the report
    #[arg(long)]
    provenance: Option<String>,
    /// Directory for report.json and curve CSVs
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

pub fn run(args: Args, config: &Config) -> Result<()> {
    let section = config.section("evaluate");
    let scores_path =
        config::require(args.scores, section.path("scores")?, "scores", "evaluate")?;
    let labels_path =
        config::require(args.labels, section.path("labels")?, "labels", "evaluate")?;
    let window_months = config::require(
        args.window_months,
        section.u32("window_months")?,
        "window-months",
        "evaluate",
    )?;
    let iterations =
        config::or_default(args.iterations, section.usize("iterations")?, DEFAULT_ITERATIONS);
    let seed = config::require(args.seed, section.u64("seed")?, "seed", "evaluate")?;
    let fractions = match args.tier_fractions {
        Some(text) => config::parse_f64_list(&text)?,
        None => section
            .f64_list("tier_fractions")?
            .unwrap_or_else(|| DEFAULT_TIER_FRACTIONS.to_vec()),
    };
    let provenance =
        config::or_default(args.provenance, section.string("provenance")?, "external".into());
    let out_dir = config::require(args.out_dir, section.path("out_dir")?, "out-dir", "evaluate")?;

    let scored = crate::commands::scored_patients(&scores_path, &labels_path, window_months)?;
    let report = evaluate(&scored, &fractions, iterations, seed, &provenance, Some(window_months))?;

    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let report_path = out_dir.join("report.json");
    std::fs::write(&report_path, format!("{}\n", serde_json::to_string_pretty(&report)?))
        .with_context(|| format!("writing {}", report_path.display()))?;

    let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    let labels: Vec<bool> = scored.iter().map(|s| s.label).collect();
    let roc_path = out_dir.join("roc_curve.csv");
    write_roc_curve_csv(
        &scores,
        &labels,
        BufWriter::new(File::create(&roc_path)?),
    )?;
    let pr_path = out_dir.join("pr_curve.csv");
    write_pr_curve_csv(&scores, &labels, BufWriter::new(File::create(&pr_path)?))?;

    let mut manifest = Manifest::new("evaluate", config);
    manifest.input(&scores_path)?;
    manifest.input(&labels_path)?;
    manifest.param("window_months", window_months);
    manifest.param("iterations", iterations);
    manifest.param("seed", seed);
    manifest.param("tier_fractions", &fractions);
    manifest.param("provenance", &provenance);
    manifest.param("n", report.n);
    manifest.param("events", report.events);
    manifest.output(&report_path)?;
    manifest.output(&roc_path)?;
    manifest.output(&pr_path)?;
    manifest.write(&out_dir)?;

    println!(
        "n={} events={} | ROC-AUC {:.4} ({:.4}, {:.4}) | PR-AUC {:.4} ({:.4}, {:.4})",
        report.n,
        report.events,
        report.roc_auc.value,
        report.roc_auc.lower,
        report.roc_auc.upper,
        report.pr_auc.value,
        report.pr_auc.lower,
        report.pr_auc.upper,
    );
    println!("report written to {}", report_path.display());
    Ok(())
}

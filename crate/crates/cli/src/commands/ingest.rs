use crate::config::{self, Config};
use crate::manifest::Manifest;
use anyhow::{Context, Result};
use clap::Args as ClapArgs;
use cohortcast_core::pipeline::{ingest_scores, write_scores_csv, Provenance};
use cohortcast_core::synth::read_labels_csv;
use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

#[derive(ClapArgs)]
pub struct Args {
    /// External `patient_id,score` CSV
    #[arg(long, value_name = "FILE")]
    scores: Option<PathBuf>,
    /// Labels CSV defining the cohort the scores must cover
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    /// Name recorded as the score source
    #[arg(long)]
    name: Option<String>,
    /// Canonicalized output CSV
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

pub fn run(args: Args, config: &Config) -> Result<()> {
    let section = config.section("ingest");
    let scores_path = config::require(args.scores, section.path("scores")?, "scores", "ingest")?;
    let labels_path = config::require(args.labels, section.path("labels")?, "labels", "ingest")?;
    let name = config::require(args.name, section.string("name")?, "name", "ingest")?;
    let out = config::require(args.out, section.path("out")?, "out", "ingest")?;

    let labels = read_labels_csv(crate::commands::open(&labels_path)?)?;
    let cohort_ids: BTreeSet<String> = labels.keys().cloned().collect();
    let score_set = ingest_scores(
        crate::commands::open(&scores_path)?,
        &cohort_ids,
        Provenance::External(name.clone()),
    )?;

    let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    write_scores_csv(&score_set, BufWriter::new(file))?;

    let mut manifest = Manifest::new("ingest", config);
    manifest.input(&scores_path)?;
    manifest.input(&labels_path)?;
    manifest.param("name", &name);
    manifest.param("patients", score_set.scores.len());
    manifest.param("cohort", cohort_ids.len());
    manifest.output(&out)?;
    manifest.write(out.parent().unwrap_or_else(|| std::path::Path::new(".")))?;

    println!(
        "ingested {} scores from {name:?} ({} cohort patients) into {}",
        score_set.scores.len(),
        cohort_ids.len(),
        out.display()
    );
    Ok(())
}

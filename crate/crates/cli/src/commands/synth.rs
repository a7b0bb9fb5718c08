use crate::config::{self, Config};
use crate::manifest::Manifest;
use anyhow::{Context, Result};
use clap::Args as ClapArgs;
use cohortcast_core::synth::{write_cohort, CohortSpec};
use std::path::PathBuf;

#[derive(ClapArgs)]
pub struct Args {
    /// Cohort spec TOML
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Feature catalog TOML
    #[arg(long, value_name = "FILE")]
    catalog: Option<PathBuf>,
    /// Directory for visits.tsv, attributes.csv, labels.csv, truth.toml
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Override the spec's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the spec's cohort size
    #[arg(long)]
    n_patients: Option<usize>,
}

pub fn run(args: Args, config: &Config) -> Result<()> {
    let section = config.section("synth");
    let spec_path = config::require(args.spec, section.path("spec")?, "spec", "synth")?;
    let catalog_path =
        config::require(args.catalog, section.path("catalog")?, "catalog", "synth")?;
    let out_dir = config::require(args.out_dir, section.path("out_dir")?, "out-dir", "synth")?;

    let catalog = crate::commands::load_catalog(&catalog_path)?;
    let mut spec = CohortSpec::load(&spec_path)
        .with_context(|| format!("loading cohort spec {}", spec_path.display()))?;
    if let Some(seed) = args.seed.or(section.u64("seed")?) {
        spec.seed = seed;
    }
    if let Some(n) = args.n_patients.or(section.usize("n_patients")?) {
        spec.n_patients = n;
    }

    let mut manifest = Manifest::new("synth", config);
    manifest.input(&spec_path)?;
    manifest.input(&catalog_path)?;
    manifest.param("seed", spec.seed);
    manifest.param("n_patients", spec.n_patients);
    manifest.param("window_start", spec.window_start.to_string());
    manifest.param(
        "granularity",
        crate::commands::granularity_name(spec.granularity),
    );

    let summary = write_cohort(&catalog, spec, &out_dir)?;

    for file in ["visits.tsv", "attributes.csv", "labels.csv", "truth.toml"] {
        manifest.output(&out_dir.join(file))?;
    }
    manifest.param("realized_prevalence", &summary.realized_prevalence);
    manifest.write(&out_dir)?;

    println!(
        "wrote {} patients ({} visit rows) to {}",
        summary.n_patients,
        summary.visit_rows,
        out_dir.display()
    );
    for (window, rate) in &summary.realized_prevalence {
        println!("  {window}: {:.4}%", rate * 100.0);
    }
    Ok(())
}

use crate::config::{self, Config};
use crate::manifest::Manifest;
use anyhow::{bail, Context, Result};
use clap::Args as ClapArgs;
use cohortcast_core::eval::bootstrap::DEFAULT_ITERATIONS;
use cohortcast_core::fairness::{build_report, Grouping};
use cohortcast_core::represent::read_attributes_csv;
use std::fs::File;
use std::path::PathBuf;

#[derive(ClapArgs)]
pub struct Args {
    /// `patient_id,score` CSV
    #[arg(long, value_name = "FILE")]
    scores: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    attributes: Option<PathBuf>,
    /// Label window in months
    #[arg(long)]
    window_months: Option<u32>,
    /// Grouping to analyse, optionally with its attribute column:
    /// "race", "age_band=Age", "ethnicity=Ethnicity" (repeatable)
    #[arg(long = "grouping", value_name = "SPEC")]
    groupings: Vec<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Score source recorded in the report
    #[arg(long)]
    provenance: Option<String>,
    /// Output JSON
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn parse_grouping(spec: &str) -> Result<(Grouping, String)> {
    let (name, feature) = match spec.split_once('=') {
        Some((name, feature)) => (name, Some(feature.to_string())),
        None => (spec, None),
    };
    let (grouping, default_feature) = match name {
        "race" => (Grouping::Race, "Race"),
        "age_band" => (Grouping::AgeBand, "Age"),
        "ethnicity" => (Grouping::Ethnicity, "Ethnicity"),
        other => bail!("unknown grouping {other:?} (race, age_band, ethnicity)"),
    };
    Ok((grouping, feature.unwrap_or_else(|| default_feature.to_string())))
}

pub fn run(args: Args, config: &Config) -> Result<()> {
    let section = config.section("fairness");
    let scores_path =
        config::require(args.scores, section.path("scores")?, "scores", "fairness")?;
    let labels_path =
        config::require(args.labels, section.path("labels")?, "labels", "fairness")?;
    let attributes_path =
        config::require(args.attributes, section.path("attributes")?, "attributes", "fairness")?;
    let window_months = config::require(
        args.window_months,
        section.u32("window_months")?,
        "window-months",
        "fairness",
    )?;
    let grouping_specs = if args.groupings.is_empty() {
        match section.string("groupings")? {
            Some(text) => text.split(',').map(str::trim).map(str::to_string).collect(),
            None => bail!("missing --grouping (or [fairness].groupings in the config)"),
        }
    } else {
        args.groupings
    };
    let iterations =
        config::or_default(args.iterations, section.usize("iterations")?, DEFAULT_ITERATIONS);
    let seed = config::require(args.seed, section.u64("seed")?, "seed", "fairness")?;
    let provenance =
        config::or_default(args.provenance, section.string("provenance")?, "external".into());
    let out = config::require(args.out, section.path("out")?, "out", "fairness")?;

    let scored = crate::commands::scored_patients(&scores_path, &labels_path, window_months)?;
    let attributes = read_attributes_csv(
        File::open(&attributes_path)
            .with_context(|| format!("opening {}", attributes_path.display()))?,
    )?;
    let assignments = grouping_specs
        .iter()
        .map(|spec| {
            let (grouping, feature) = parse_grouping(spec)?;
            let levels = crate::commands::attribute_levels(&attributes, &scored, &feature)?;
            Ok((grouping, levels))
        })
        .collect::<Result<Vec<_>>>()?;

    let report = build_report(&scored, &assignments, iterations, seed, &provenance)?;
    std::fs::write(&out, format!("{}\n", report.to_json()))
        .with_context(|| format!("writing {}", out.display()))?;

    let mut manifest = Manifest::new("fairness", config);
    manifest.input(&scores_path)?;
    manifest.input(&labels_path)?;
    manifest.input(&attributes_path)?;
    manifest.param("window_months", window_months);
    manifest.param("groupings", &grouping_specs);
    manifest.param("iterations", iterations);
    manifest.param("seed", seed);
    manifest.param("provenance", &provenance);
    manifest.output(&out)?;
    manifest.write(out.parent().unwrap_or_else(|| std::path::Path::new(".")))?;

    print!("{}", report.to_text());
    println!("report written to {}", out.display());
    Ok(())
}

use crate::config::{self, Config};
use crate::manifest::Manifest;
use anyhow::{Context, Result};
use clap::Args as ClapArgs;
use cohortcast_core::represent::{build_vector, write_vectors_csv, VectorLayout};
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::sync::Arc;

#[derive(ClapArgs)]
pub struct Args {
    #[arg(long, value_name = "FILE")]
    catalog: Option<PathBuf>,
    /// Visit records (.tsv or .csv)
    #[arg(long, value_name = "FILE")]
    visits: Option<PathBuf>,
    /// Window-level attributes CSV
    #[arg(long, value_name = "FILE")]
    attributes: Option<PathBuf>,
    /// static | time-varying | time-varying-no-fill
    #[arg(long)]
    representation: Option<String>,
    /// Observation window start (YYYY-MM-DD)
    #[arg(long, value_name = "DATE")]
    window_start: Option<String>,
    /// quarter | half-year
    #[arg(long)]
    granularity: Option<String>,
    /// Output vectors CSV
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

pub fn run(args: Args, config: &Config) -> Result<()> {
    let section = config.section("features");
    let catalog_path =
        config::require(args.catalog, section.path("catalog")?, "catalog", "features")?;
    let visits_path =
        config::require(args.visits, section.path("visits")?, "visits", "features")?;
    let attributes_path =
        config::require(args.attributes, section.path("attributes")?, "attributes", "features")?;
    let representation = crate::commands::parse_representation(&config::require(
        args.representation,
        section.string("representation")?,
        "representation",
        "features",
    )?)?;
    let window_start = crate::commands::parse_date(&config::require(
        args.window_start,
        section.string("window_start")?,
        "window-start",
        "features",
    )?)?;
    let granularity = crate::commands::parse_granularity(&config::or_default(
        args.granularity,
        section.string("granularity")?,
        "quarter".to_string(),
    ))?;
    let out = config::require(args.out, section.path("out")?, "out", "features")?;

    let catalog = crate::commands::load_catalog(&catalog_path)?;
    let profiles = crate::commands::assemble_cohort(
        &catalog,
        &visits_path,
        &attributes_path,
        window_start,
        granularity,
    )?;
    let layout = Arc::new(VectorLayout::new(&catalog, representation, granularity));
    let vectors = profiles
        .iter()
        .map(|p| build_vector(&catalog, p, &layout))
        .collect::<Result<Vec<_>, _>>()?;
    let file =
        File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    write_vectors_csv(&layout, &vectors, BufWriter::new(file))?;

    let mut manifest = Manifest::new("features", config);
    manifest.input(&catalog_path)?;
    manifest.input(&visits_path)?;
    manifest.input(&attributes_path)?;
    manifest.param("representation", crate::commands::representation_name(representation));
    manifest.param("window_start", window_start.to_string());
    manifest.param("granularity", crate::commands::granularity_name(granularity));
    manifest.param("columns", layout.len());
    manifest.param("patients", vectors.len());
    manifest.output(&out)?;
    manifest.write(out.parent().unwrap_or_else(|| std::path::Path::new(".")))?;

    println!(
        "wrote {} x {} {} vectors to {}",
        vectors.len(),
        layout.len(),
        crate::commands::representation_name(representation),
        out.display()
    );
    Ok(())
}

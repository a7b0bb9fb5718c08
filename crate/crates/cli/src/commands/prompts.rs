use crate::config::{self, Config};
use crate::manifest::Manifest;
use anyhow::{bail, Context, Result};
use clap::Args as ClapArgs;
use cohortcast_core::represent::prompt::{render_prompt, write_prompts_jsonl};
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

#[derive(ClapArgs)]
pub struct Args {
    #[arg(long, value_name = "FILE")]
    catalog: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    visits: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    attributes: Option<PathBuf>,
    /// Observation window start (YYYY-MM-DD)
    #[arg(long, value_name = "DATE")]
    window_start: Option<String>,
    /// quarter | half-year
    #[arg(long)]
    granularity: Option<String>,
    /// Prediction window in months (3, 6, 9, 12)
    #[arg(long)]
    window_months: Option<u32>,
    /// jsonl (all patients) | text (single patient, raw prompt)
    #[arg(long)]
    format: Option<String>,
    /// Restrict to one patient id
    #[arg(long)]
    patient: Option<String>,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

pub fn run(args: Args, config: &Config) -> Result<()> {
    let section = config.section("prompts");
    let catalog_path =
        config::require(args.catalog, section.path("catalog")?, "catalog", "prompts")?;
    let visits_path = config::require(args.visits, section.path("visits")?, "visits", "prompts")?;
    let attributes_path =
        config::require(args.attributes, section.path("attributes")?, "attributes", "prompts")?;
    let window_start = crate::commands::parse_date(&config::require(
        args.window_start,
        section.string("window_start")?,
        "window-start",
        "prompts",
    )?)?;
    let granularity = crate::commands::parse_granularity(&config::or_default(
        args.granularity,
        section.string("granularity")?,
        "quarter".to_string(),
    ))?;
    let window_months = config::require(
        args.window_months,
        section.u32("window_months")?,
        "window-months",
        "prompts",
    )?;
    let format = config::or_default(args.format, section.string("format")?, "jsonl".to_string());
    let patient = args.patient.or(section.string("patient")?);
    let out = config::require(args.out, section.path("out")?, "out", "prompts")?;

    let catalog = crate::commands::load_catalog(&catalog_path)?;
    let mut profiles = crate::commands::assemble_cohort(
        &catalog,
        &visits_path,
        &attributes_path,
        window_start,
        granularity,
    )?;
    if let Some(id) = &patient {
        profiles.retain(|p| &p.patient_id == id);
        if profiles.is_empty() {
            bail!("patient {id:?} not found in {}", attributes_path.display());
        }
    }
    let docs = profiles
        .iter()
        .map(|p| render_prompt(&catalog, p, window_months))
        .collect::<Result<Vec<_>, _>>()?;

    match format.as_str() {
        "jsonl" => {
            let file =
                File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_prompts_jsonl(&docs, BufWriter::new(file))?;
        }
        "text" => {
            if docs.len() != 1 {
                bail!(
                    "text format renders one patient; found {} (use --patient)",
                    docs.len()
                );
            }
            std::fs::write(&out, format!("{}\n", docs[0].text))
                .with_context(|| format!("writing {}", out.display()))?;
        }
        other => bail!("unknown format {other:?} (jsonl, text)"),
    }

    let mut manifest = Manifest::new("prompts", config);
    manifest.input(&catalog_path)?;
    manifest.input(&visits_path)?;
    manifest.input(&attributes_path)?;
    manifest.param("window_start", window_start.to_string());
    manifest.param("granularity", crate::commands::granularity_name(granularity));
    manifest.param("window_months", window_months);
    manifest.param("format", &format);
    if let Some(id) = &patient {
        manifest.param("patient", id);
    }
    manifest.param("prompts", docs.len());
    manifest.output(&out)?;
    manifest.write(out.parent().unwrap_or_else(|| std::path::Path::new(".")))?;

    println!("wrote {} prompt(s) to {}", docs.len(), out.display());
    Ok(())
}

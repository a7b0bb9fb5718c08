use crate::config::{self, Config};
use crate::manifest::Manifest;
use anyhow::{Context, Result};
use clap::Args as ClapArgs;
use cohortcast_core::pipeline::{run_ablation, AblationReport, HyperGrid};
use cohortcast_core::represent::Representation;
use cohortcast_core::rng::derive_seed;
use cohortcast_core::synth::CohortSpec;
use serde::Serialize;
use std::path::PathBuf;

#[derive(ClapArgs)]
pub struct Args {
    #[arg(long, value_name = "FILE")]
    catalog: Option<PathBuf>,
    /// Cohort spec whose seed is re-derived per run
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Label window in months
    #[arg(long)]
    window_months: Option<u32>,
    /// Number of reseeded runs
    #[arg(long)]
    runs: Option<usize>,
    /// Base seed the per-run seeds derive from
    #[arg(long)]
    base_seed: Option<u64>,
    #[arg(long)]
    c_values: Option<String>,
    #[arg(long)]
    l1_ratios: Option<String>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Output JSON
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct WinCounts {
    fill_over_no_fill: usize,
    fill_over_static: usize,
    no_fill_over_static: usize,
    runs: usize,
}

#[derive(Serialize)]
struct AblationStudy {
    window_months: u32,
    base_seed: u64,
    wins: WinCounts,
    runs: Vec<AblationReport>,
}

pub fn run(args: Args, config: &Config) -> Result<()> {
    let section = config.section("ablate");
    let catalog_path =
        config::require(args.catalog, section.path("catalog")?, "catalog", "ablate")?;
    let spec_path = config::require(args.spec, section.path("spec")?, "spec", "ablate")?;
    let window_months = config::require(
        args.window_months,
        section.u32("window_months")?,
        "window-months",
        "ablate",
    )?;
    let runs = config::or_default(args.runs, section.usize("runs")?, 10);
    let base_seed = config::or_default(args.base_seed, section.u64("base_seed")?, 41);
    let grid = HyperGrid {
        c_values: match args.c_values {
            Some(text) => config::parse_f64_list(&text)?,
            None => section.f64_list("c_values")?.unwrap_or_else(|| vec![0.1, 1.0, 10.0]),
        },
        l1_ratios: match args.l1_ratios {
            Some(text) => config::parse_f64_list(&text)?,
            None => section.f64_list("l1_ratios")?.unwrap_or_else(|| vec![0.0, 0.5, 1.0]),
        },
        max_iter: config::or_default(args.max_iter, section.usize("max_iter")?, 300),
    };
    let out = config::require(args.out, section.path("out")?, "out", "ablate")?;

    let catalog = crate::commands::load_catalog(&catalog_path)?;
    let spec = CohortSpec::load(&spec_path)
        .with_context(|| format!("loading cohort spec {}", spec_path.display()))?;

    let mut reports = Vec::with_capacity(runs);
    let mut wins =
        WinCounts { fill_over_no_fill: 0, fill_over_static: 0, no_fill_over_static: 0, runs };
    for k in 0..runs {
        let mut cohort = spec.clone();
        cohort.seed = derive_seed(base_seed, &format!("ablation-{k}"));
        let report = run_ablation(&catalog, cohort, window_months, &grid)?;
        let fixed = report.arm(Representation::Static).test_pr_auc;
        let fill = report.arm(Representation::TimeVarying).test_pr_auc;
        let no_fill = report.arm(Representation::TimeVaryingNoFill).test_pr_auc;
        wins.fill_over_no_fill += usize::from(fill > no_fill);
        wins.fill_over_static += usize::from(fill > fixed);
        wins.no_fill_over_static += usize::from(no_fill > fixed);
        println!(
            "run {k}: static {fixed:.4} | time-varying {fill:.4} | no-fill {no_fill:.4}"
        );
        reports.push(report);
    }

    let study = AblationStudy { window_months, base_seed, wins, runs: reports };
    std::fs::write(&out, format!("{}\n", serde_json::to_string_pretty(&study)?))
        .with_context(|| format!("writing {}", out.display()))?;

    let mut manifest = Manifest::new("ablate", config);
    manifest.input(&catalog_path)?;
    manifest.input(&spec_path)?;
    manifest.param("window_months", window_months);
    manifest.param("runs", runs);
    manifest.param("base_seed", base_seed);
    manifest.param("grid", serde_json::json!({
        "c_values": &grid.c_values, "l1_ratios": &grid.l1_ratios, "max_iter": grid.max_iter
    }));
    manifest.output(&out)?;
    manifest.write(out.parent().unwrap_or_else(|| std::path::Path::new(".")))?;

    println!(
        "fill > no-fill in {}/{} runs; fill > static in {}/{}; no-fill > static in {}/{}",
        study.wins.fill_over_no_fill,
        runs,
        study.wins.fill_over_static,
        runs,
        study.wins.no_fill_over_static,
        runs
    );
    println!("study written to {}", out.display());
    Ok(())
}

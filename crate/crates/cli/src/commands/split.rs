use crate::config::{self, Config};
use crate::manifest::Manifest;
use anyhow::{Context, Result};
use clap::Args as ClapArgs;
use cohortcast_core::pipeline::{downsample_train, split, SplitLabel, StratifiedPatient};
use cohortcast_core::represent::read_attributes_csv;
use cohortcast_core::synth::{labels_for_window, read_labels_csv};
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

#[derive(ClapArgs)]
pub struct Args {
    /// Labels CSV; its patient ids define the cohort
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for split.csv (and downsampling artifacts)
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Also balance the training partition per stratum
    #[arg(long)]
    downsample: bool,
    /// Attributes CSV (required with --downsample)
    #[arg(long, value_name = "FILE")]
    attributes: Option<PathBuf>,
    /// Label window for downsampling (months)
    #[arg(long)]
    window_months: Option<u32>,
    /// Attribute used as the gender stratum
    #[arg(long)]
    gender_feature: Option<String>,
    /// Attribute used as the age stratum
    #[arg(long)]
    age_feature: Option<String>,
    /// Attribute used as the race stratum ("-" for none)
    #[arg(long)]
    race_feature: Option<String>,
}

pub fn run(args: Args, config: &Config) -> Result<()> {
    let section = config.section("split");
    let labels_path = config::require(args.labels, section.path("labels")?, "labels", "split")?;
    let seed = config::require(args.seed, section.u64("seed")?, "seed", "split")?;
    let out_dir = config::require(args.out_dir, section.path("out_dir")?, "out-dir", "split")?;
    let downsample = args.downsample || section.bool("downsample")?.unwrap_or(false);

    let labels = read_labels_csv(crate::commands::open(&labels_path)?)?;
    let ids: Vec<String> = labels.keys().cloned().collect();
    let assignment = split(&ids, seed)?;

    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let split_path = out_dir.join("split.csv");
    let file = File::create(&split_path)
        .with_context(|| format!("creating {}", split_path.display()))?;
    assignment.write_csv(BufWriter::new(file))?;

    let mut manifest = Manifest::new("split", config);
    manifest.input(&labels_path)?;
    manifest.param("seed", seed);
    manifest.param("patients", ids.len());
    let (train, validation, test) = assignment.counts();
    manifest.param("counts", serde_json::json!({
        "train": train, "validation": validation, "test": test
    }));
    manifest.param("downsample", downsample);
    manifest.output(&split_path)?;

    println!("split {} patients: {train} train / {validation} validation / {test} test", ids.len());

    if downsample {
        let attributes_path =
            config::require(args.attributes, section.path("attributes")?, "attributes", "split")?;
        let window_months = config::require(
            args.window_months,
            section.u32("window_months")?,
            "window-months",
            "split",
        )?;
        let gender_feature = config::or_default(
            args.gender_feature,
            section.string("gender_feature")?,
            "Gender".to_string(),
        );
        let age_feature =
            config::or_default(args.age_feature, section.string("age_feature")?, "Age".to_string());
        let race_feature = config::or_default(
            args.race_feature,
            section.string("race_feature")?,
            "Race".to_string(),
        );

        let attributes = read_attributes_csv(
            File::open(&attributes_path)
                .with_context(|| format!("opening {}", attributes_path.display()))?,
        )?;
        let window_labels = labels_for_window(&labels, window_months)?;
        let stratum_level = |attrs: &std::collections::BTreeMap<_, _>, feature: &str| {
            if feature == "-" {
                return "all".to_string();
            }
            cohortcast_core::represent::attribute_level(attrs, feature)
                .unwrap_or_else(|| "unknown".to_string())
        };
        let patients: Vec<StratifiedPatient> = assignment
            .ids_in(SplitLabel::Train)
            .into_iter()
            .map(|id| {
                let attrs = attributes
                    .get(&id)
                    .with_context(|| format!("patient {id:?} missing from attributes"))?;
                Ok(StratifiedPatient {
                    label: window_labels[&id],
                    gender: stratum_level(attrs, &gender_feature),
                    age_band: stratum_level(attrs, &age_feature),
                    race: stratum_level(attrs, &race_feature),
                    patient_id: id,
                })
            })
            .collect::<Result<_>>()?;
        let (retained, report) = downsample_train(&patients, seed);

        let retained_path = out_dir.join("retained.csv");
        let mut text = String::from("patient_id\n");
        for id in &retained {
            text.push_str(id);
            text.push('\n');
        }
        std::fs::write(&retained_path, text)
            .with_context(|| format!("writing {}", retained_path.display()))?;

        let report_path = out_dir.join("downsample.json");
        std::fs::write(
            &report_path,
            format!("{}\n", serde_json::to_string_pretty(&report)?),
        )
        .with_context(|| format!("writing {}", report_path.display()))?;

        manifest.input(&attributes_path)?;
        manifest.param("window_months", window_months);
        manifest.param("strata_features", serde_json::json!({
            "gender": gender_feature, "age": age_feature, "race": race_feature
        }));
        manifest.param("retained_train", retained.len());
        manifest.output(&retained_path)?;
        manifest.output(&report_path)?;

        println!(
            "downsampled train to {} patients across {} strata",
            retained.len(),
            report.strata.len()
        );
    }

    manifest.write(&out_dir)?;
    Ok(())
}

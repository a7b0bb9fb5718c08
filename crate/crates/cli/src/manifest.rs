//! Run manifests: the resolved parameters plus a sha256 for every file the
//! command read or wrote. Deliberately timestamp-free so reruns are
//! byte-identical.

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Serialize)]
pub struct FileStamp {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct Manifest {
    pub command: String,
    pub package: Package,
    /// The config file the run loaded, if any.
    pub config: Option<FileStamp>,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub inputs: Vec<FileStamp>,
    pub outputs: Vec<FileStamp>,
}

#[derive(Serialize)]
pub struct Package {
    pub name: &'static str,
    pub version: &'static str,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn stamp(path: &Path) -> Result<FileStamp> {
    let bytes =
        std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(FileStamp { path: path.display().to_string(), sha256: sha256_hex(&bytes) })
}

impl Manifest {
    pub fn new(command: &str, config: &crate::config::Config) -> Self {
        Manifest {
            command: command.to_string(),
            package: Package { name: "cohortcast", version: env!("CARGO_PKG_VERSION") },
            config: match (&config.path, &config.sha256) {
                (Some(p), Some(h)) => {
                    Some(FileStamp { path: p.display().to_string(), sha256: h.clone() })
                }
                _ => None,
            },
            parameters: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) {
        let value = serde_json::to_value(value).expect("parameter serializes");
        self.parameters.insert(key.to_string(), value);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(stamp(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(stamp(path)?);
        Ok(())
    }

    /// Writes `<command>.manifest.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(format!("{}.manifest.json", self.command));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, format!("{text}\n"))
            .with_context(|| format!("writing {}", path.display()))
    }
}

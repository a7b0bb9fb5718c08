//! Optional run config: one TOML file, one table per command. A flag given
//! on the command line always overrides the config value of the same name
//! (keys use underscores where flags use dashes).

use anyhow::{bail, Context, Result};
use std::path::{Path, PathBuf};

pub struct Config {
    table: toml::Table,
    pub path: Option<PathBuf>,
    pub sha256: Option<String>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Config { table: toml::Table::new(), path: None, sha256: None });
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let table: toml::Table =
            text.parse().with_context(|| format!("parsing config {}", path.display()))?;
        Ok(Config {
            table,
            path: Some(path.to_path_buf()),
            sha256: Some(crate::manifest::sha256_hex(text.as_bytes())),
        })
    }

    /// The command's own section; empty when absent.
    pub fn section(&self, command: &str) -> Section<'_> {
        let table = match self.table.get(command) {
            Some(toml::Value::Table(t)) => Some(t),
            _ => None,
        };
        Section { command: command.to_string(), table }
    }
}

pub struct Section<'a> {
    command: String,
    table: Option<&'a toml::Table>,
}

impl Section<'_> {
    fn value(&self, key: &str) -> Option<&toml::Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn wrong_type(&self, key: &str, want: &str) -> anyhow::Error {
        anyhow::anyhow!("config [{}].{key} is not a {want}", self.command)
    }

    pub fn string(&self, key: &str) -> Result<Option<String>> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.wrong_type(key, "string")),
        }
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.string(key)?.map(PathBuf::from))
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(_) => Err(self.wrong_type(key, "non-negative integer")),
        }
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    pub fn u32(&self, key: &str) -> Result<Option<u32>> {
        match self.u64(key)? {
            None => Ok(None),
            Some(v) => Ok(Some(u32::try_from(v).map_err(|_| self.wrong_type(key, "u32"))?)),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    toml::Value::Float(f) => Ok(*f),
                    toml::Value::Integer(i) => Ok(*i as f64),
                    _ => Err(self.wrong_type(key, "number array")),
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
            Some(_) => Err(self.wrong_type(key, "number array")),
        }
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>> {
        match self.value(key) {
            None => Ok(None),
            Some(toml::Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(self.wrong_type(key, "boolean")),
        }
    }
}

/// Flag value, else config value, else error naming both spellings.
pub fn require<T>(flag: Option<T>, config: Option<T>, flag_name: &str, section: &str) -> Result<T> {
    match flag.or(config) {
        Some(v) => Ok(v),
        None => bail!(
            "missing --{flag_name} (or [{section}].{} in the config)",
            flag_name.replace('-', "_")
        ),
    }
}

/// Flag value, else config value, else a default.
pub fn or_default<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

/// Comma-separated float list from a flag ("0.1,1,10").
pub fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number {s:?} in list {text:?}"))
        })
        .collect()
}

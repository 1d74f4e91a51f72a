//! Operator configuration: built-in defaults, overridden by a `key = value`
//! file, overridden by command-line flags.
//!
//! Recognized keys: `n`, `threshold`, `alert_threshold`, `quality_floor`,
//! `retain_alias_images`, `ridge_freq`, `field_harmonics`,
//! `identity_granularity`, `min_minutiae`, `max_minutiae`, `store`,
//! `key_file` and `audit_log`. Blank lines and lines starting with `#` are
//! ignored.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use proxyprints_core::pipeline::PipelineConfig;
use serde::Serialize;

pub const DEFAULT_STORE: &str = "proxyprints-store.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Config {
    pub pipeline: PipelineConfig,
    pub store: Option<PathBuf>,
    pub key_file: Option<PathBuf>,
    pub audit_log: Option<PathBuf>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| anyhow!("invalid value {value:?} for {key}"))
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.pipeline;
        match key {
            "n" => p.n = parse(key, value)?,
            "threshold" => p.threshold = parse(key, value)?,
            "alert_threshold" => p.alert_threshold = parse(key, value)?,
            "quality_floor" => p.quality_floor = parse(key, value)?,
            "retain_alias_images" => p.retain_alias_images = parse(key, value)?,
            "ridge_freq" => p.synthesis.ridge_freq = parse(key, value)?,
            "field_harmonics" => p.synthesis.field_harmonics = parse(key, value)?,
            "identity_granularity" => p.synthesis.identity_granularity = parse(key, value)?,
            "min_minutiae" => p.synthesis.min_minutiae = parse(key, value)?,
            "max_minutiae" => p.synthesis.max_minutiae = parse(key, value)?,
            "store" => self.store = Some(value.into()),
            "key_file" => self.key_file = Some(value.into()),
            "audit_log" => self.audit_log = Some(value.into()),
            _ => bail!("unknown configuration key {key:?}"),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key = value", no + 1))?;
            self.set(k.trim(), v.trim()).with_context(|| format!("line {}", no + 1))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut c = Self::default();
        c.merge_text(&text).with_context(|| format!("config {}", path.display()))?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        Ok(self.pipeline.validate()?)
    }

    pub fn store_path(&self) -> PathBuf {
        self.store.clone().unwrap_or_else(|| DEFAULT_STORE.into())
    }

    /// Next to the store unless configured.
    pub fn audit_path(&self) -> PathBuf {
        self.audit_log.clone().unwrap_or_else(|| {
            let mut s = self.store_path().into_os_string();
            s.push(".audit.jsonl");
            s.into()
        })
    }
}

/// The file format itself, so `Config` round-trips through `merge_text`.
impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = &self.pipeline;
        writeln!(f, "n = {}", p.n)?;
        writeln!(f, "threshold = {}", p.threshold)?;
        writeln!(f, "alert_threshold = {}", p.alert_threshold)?;
        writeln!(f, "quality_floor = {}", p.quality_floor)?;
        writeln!(f, "retain_alias_images = {}", p.retain_alias_images)?;
        writeln!(f, "ridge_freq = {}", p.synthesis.ridge_freq)?;
        writeln!(f, "field_harmonics = {}", p.synthesis.field_harmonics)?;
        writeln!(f, "identity_granularity = {}", p.synthesis.identity_granularity)?;
        writeln!(f, "min_minutiae = {}", p.synthesis.min_minutiae)?;
        writeln!(f, "max_minutiae = {}", p.synthesis.max_minutiae)?;
        for (k, v) in [("store", &self.store), ("key_file", &self.key_file), ("audit_log", &self.audit_log)] {
            if let Some(v) = v {
                writeln!(f, "{k} = {}", v.display())?;
            }
        }
        Ok(())
    }
}

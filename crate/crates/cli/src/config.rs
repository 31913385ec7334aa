//! Sectioned `key = value` configuration files.
//!
//! ```text
//! # comment
//! [grid]
//! start = 0
//! step = 30
//! ```
//!
//! Keys are addressed as `section.key`. Keys before any section header
//! belong to the empty section and are addressed by their bare name.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
    /// Directory relative paths are resolved against.
    base: Option<PathBuf>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name =
                    rest.strip_suffix(']').ok_or_else(|| anyhow!("line {}: unterminated section header", i + 1))?;
                section = name.trim().to_string();
                if section.is_empty() || section.contains(char::is_whitespace) {
                    bail!("line {}: invalid section name {name:?}", i + 1);
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
            let key = key.trim();
            if key.is_empty() {
                bail!("line {}: empty key", i + 1);
            }
            let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            if values.insert(full.clone(), value.trim().to_string()).is_some() {
                bail!("line {}: duplicate key {full}", i + 1);
            }
        }
        Ok(Self { values, base: None })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.base = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("config key {key}: cannot parse {v:?}: {e}")))
            .transpose()
    }

    /// A path value, resolved against the config file's directory.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|v| match &self.base {
            Some(base) if Path::new(v).is_relative() => base.join(v),
            _ => PathBuf::from(v),
        })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Fails on keys outside `known`, which catches misspelt settings.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        let unknown: Vec<&str> = self.keys().filter(|k| !known.contains(k)).collect();
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.join(", "));
        }
        Ok(())
    }
}

/// Flag value if given, else the config value, else `None`.
pub fn pick<T>(flag: Option<T>, config: &Config, key: &str) -> Result<Option<T>>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => config.get(key),
    }
}

pub fn pick_path(flag: Option<PathBuf>, config: &Config, key: &str) -> Option<PathBuf> {
    flag.or_else(|| config.path(key))
}

//! Run manifest: versions, seed, resolved settings and content hashes.
//!
//! Paths are relative to the output directory and inputs are recorded by
//! file name, so reruns elsewhere produce the same manifest. No timings
//! are recorded.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use recurrent_forest::forest::FORMAT_VERSION;
use serde::{Deserialize, Serialize};

use crate::io::{read_text, sha256_hex};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub role: String,
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl Entry {
    pub fn new(role: &str, path: &str, content: &[u8]) -> Self {
        Self { role: role.into(), path: path.into(), sha256: sha256_hex(content), bytes: content.len() as u64 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub stage: String,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub model_format: u32,
    /// `complete` or `failed`.
    pub status: String,
    pub seed: u64,
    pub settings: BTreeMap<String, String>,
    pub inputs: Vec<Entry>,
    pub intermediates: Vec<Entry>,
    pub artifacts: Vec<Entry>,
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<FailureRecord>,
}

impl Manifest {
    pub fn new(seed: u64, settings: BTreeMap<String, String>) -> Self {
        Self {
            tool: "rfre".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            model_format: FORMAT_VERSION,
            status: "running".into(),
            seed,
            settings,
            inputs: Vec::new(),
            intermediates: Vec::new(),
            artifacts: Vec::new(),
            notes: Vec::new(),
            failure: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Checks a completed run directory: status, the expected artifact roles
/// and every recorded hash.
pub fn verify(dir: &Path) -> Result<Manifest> {
    let path = dir.join(FILE_NAME);
    let m: Manifest =
        serde_json::from_str(&read_text(&path)?).with_context(|| format!("parsing {}", path.display()))?;
    ensure!(m.status == "complete", "run status is {}", m.status);
    ensure!(m.model_format == FORMAT_VERSION, "model format {} is not {FORMAT_VERSION}", m.model_format);
    for role in ["model", "predictions", "metrics"] {
        ensure!(m.artifacts.iter().any(|a| a.role == role), "no {role} artifact");
    }
    for e in m.intermediates.iter().chain(&m.artifacts) {
        ensure!(Path::new(&e.path).is_relative(), "{} is not a relative path", e.path);
        let bytes = std::fs::read(dir.join(&e.path)).with_context(|| format!("reading {}", e.path))?;
        if sha256_hex(&bytes) != e.sha256 || bytes.len() as u64 != e.bytes {
            bail!("{} does not match its recorded hash", e.path);
        }
    }
    Ok(m)
}

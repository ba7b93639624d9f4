//! Run manifests: the reproducibility record of one experiment.
//!
//! A manifest stores the resolved config (every default explicit), the
//! digest of its canonical rendering, the seed, a digest per emitted
//! report, and the recipe's invariant checks. `(config, seed)` determines
//! every output byte, so two runs agree exactly when their manifests carry
//! the same output digests; wall time is recorded for the log but takes no
//! part in any comparison.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// One emitted file and its content digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
}

/// One invariant the recipe checked on its own output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckRecord {
    pub fn new(name: &str, pass: bool, detail: String) -> CheckRecord {
        CheckRecord { name: String::from(name), pass, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub seed: u64,
    pub config_sha256: String,
    pub outputs: Vec<OutputRecord>,
    pub checks: Vec<CheckRecord>,
    /// True exactly when every check passed; the process exit code.
    pub passed: bool,
    /// Informational only; excluded from verification diffs.
    pub wall_time_ms: u64,
    /// The resolved configuration the run executed.
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self).context("rendering manifest")?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Manifest> {
        serde_json::from_str(text).context("parsing manifest")
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        Manifest::from_json(&text)
    }

    pub fn output(&self, file: &str) -> Option<&OutputRecord> {
        self.outputs.iter().find(|o| o.file == file)
    }
}

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

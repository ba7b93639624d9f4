//! Orchestration: config file to reports on disk to manifest, and the
//! verification loop that re-runs a manifest's embedded config and diffs
//! the output digests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};

use crate::config::ExperimentConfig;
use crate::manifest::{sha256_hex, CheckRecord, Manifest, OutputRecord};
use crate::mapper::AnyMapper;
use crate::recipes::run_recipe;

/// Reads, parses, and resolves a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    ExperimentConfig::from_toml(&text)?
        .resolved()
        .with_context(|| format!("validating {}", path.display()))
}

/// Runs the recipe and writes reports plus `manifest.json` into `out_dir`.
/// Output bytes are a pure function of `(config, seed)`; only the
/// manifest's wall-time field varies between identical runs.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, mapper: &AnyMapper) -> Result<Manifest> {
    let started = Instant::now();
    let output = run_recipe(cfg, mapper)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let mut outputs = Vec::with_capacity(output.tables.len() + output.artifacts.len());
    for table in &output.tables {
        let file = format!("{}-{}.{}", cfg.experiment.name(), table.name, cfg.format.extension());
        let text = table.render(cfg.format);
        fs::write(out_dir.join(&file), &text).with_context(|| format!("writing {file}"))?;
        outputs.push(OutputRecord { file, sha256: sha256_hex(text.as_bytes()) });
    }
    for (file, bytes) in &output.artifacts {
        fs::write(out_dir.join(file), bytes).with_context(|| format!("writing {file}"))?;
        outputs.push(OutputRecord { file: file.clone(), sha256: sha256_hex(bytes) });
    }

    let passed = output.checks.iter().all(|c| c.pass);
    let manifest = Manifest {
        experiment: String::from(cfg.experiment.name()),
        seed: cfg.mc.seed,
        config_sha256: sha256_hex(cfg.canonical_toml()?.as_bytes()),
        outputs,
        checks: output.checks,
        passed,
        wall_time_ms: started.elapsed().as_millis() as u64,
        config: cfg.clone(),
    };
    fs::write(out_dir.join("manifest.json"), manifest.to_json()?).context("writing manifest.json")?;
    Ok(manifest)
}

/// Resolves the output directory a config asks for.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    PathBuf::from(cfg.output_dir.as_deref().unwrap_or("out"))
}

/// Outcome of re-running a manifest's config: per-file digest agreement
/// and the reproduced checks. Wall time is not compared.
#[derive(Debug)]
pub struct VerifyReport {
    pub config_sha_match: bool,
    /// `(file, recorded digest matched)` in manifest order.
    pub outputs: Vec<(String, bool)>,
    /// Files the rerun produced that the manifest does not list.
    pub unexpected: Vec<String>,
    /// Checks whose pass/fail flipped, as `(name, recorded, reran)`.
    pub flipped_checks: Vec<(String, bool, bool)>,
    pub reran_passed: bool,
}

impl VerifyReport {
    pub fn clean(&self) -> bool {
        self.config_sha_match
            && self.outputs.iter().all(|(_, ok)| *ok)
            && self.unexpected.is_empty()
            && self.flipped_checks.is_empty()
            && self.reran_passed
    }
}

pub fn verify_manifest(manifest_path: &Path, mapper: &AnyMapper) -> Result<VerifyReport> {
    let recorded = Manifest::load(manifest_path)?;
    // The embedded config is already resolved; resolving again is
    // idempotent and revalidates against the current binary.
    let cfg = recorded.config.clone().resolved().context("manifest config no longer validates")?;
    let scratch = tempfile::tempdir().context("creating scratch directory")?;
    let rerun = run_experiment(&cfg, scratch.path(), mapper)?;

    let outputs = recorded
        .outputs
        .iter()
        .map(|rec| {
            let matched = rerun.output(&rec.file).is_some_and(|r| r.sha256 == rec.sha256);
            (rec.file.clone(), matched)
        })
        .collect();
    let unexpected = rerun
        .outputs
        .iter()
        .filter(|r| recorded.output(&r.file).is_none())
        .map(|r| r.file.clone())
        .collect();
    let flipped_checks = recorded
        .checks
        .iter()
        .filter_map(|old: &CheckRecord| {
            let new = rerun.checks.iter().find(|c| c.name == old.name)?;
            (new.pass != old.pass).then(|| (old.name.clone(), old.pass, new.pass))
        })
        .collect();

    Ok(VerifyReport {
        config_sha_match: rerun.config_sha256 == recorded.config_sha256,
        outputs,
        unexpected,
        flipped_checks,
        reran_passed: rerun.passed,
    })
}

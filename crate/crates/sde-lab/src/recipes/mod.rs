//! The nine experiment recipes.
//!
//! A recipe turns a resolved config into report tables, invariant checks,
//! and optional bulk artifacts; it does no file IO itself. Every random
//! quantity derives from `(config, seed)` through the core's counter-based
//! streams, so a recipe's output is a pure function of its config
//! regardless of the mapper that schedules the paths.

use anyhow::{anyhow, Context, Result};

use sde_lab_core::sde::PathConfig;

use crate::config::{Experiment, ExperimentConfig};
use crate::manifest::CheckRecord;
use crate::mapper::AnyMapper;
use crate::table::Table;

mod conjugation;
mod counterexample;
mod khasminskii;
mod norms;
mod pde;
mod regularity;
mod stability;
mod weak;
mod zvonkin;

/// Everything a run writes, before file naming.
pub struct RecipeOutput {
    pub tables: Vec<Table>,
    pub checks: Vec<CheckRecord>,
    /// Extra binary or field files: `(file name, bytes)`.
    pub artifacts: Vec<(String, Vec<u8>)>,
}

impl RecipeOutput {
    pub fn new() -> RecipeOutput {
        RecipeOutput { tables: Vec::new(), checks: Vec::new(), artifacts: Vec::new() }
    }
}

impl Default for RecipeOutput {
    fn default() -> Self {
        RecipeOutput::new()
    }
}

/// Adapter from core errors (plain `Display` values) to `anyhow` context.
pub(crate) trait CoreExt<T> {
    fn core(self, what: &str) -> Result<T>;
}

impl<T> CoreExt<T> for std::result::Result<T, sde_lab_core::Error> {
    fn core(self, what: &str) -> Result<T> {
        self.map_err(|e| anyhow!("{what}: {e}"))
    }
}

/// Paths always run on the grid's time window.
pub(crate) fn path_config(cfg: &ExperimentConfig) -> Result<PathConfig> {
    PathConfig::new(cfg.mc.n, cfg.mc.dt, cfg.grid.t0, cfg.grid.t1, cfg.mc.seed).core("mc")
}

pub fn run_recipe(cfg: &ExperimentConfig, mapper: &AnyMapper) -> Result<RecipeOutput> {
    let run = match cfg.experiment {
        Experiment::Norms => norms::run(cfg),
        Experiment::Pde => pde::run(cfg),
        Experiment::Zvonkin => zvonkin::run(cfg),
        Experiment::WeakExistence => weak::run(cfg, mapper),
        Experiment::Khasminskii => khasminskii::run(cfg, mapper),
        Experiment::Conjugation => conjugation::run(cfg, mapper),
        Experiment::Stability => stability::run(cfg, mapper),
        Experiment::Regularity => regularity::run(cfg, mapper),
        Experiment::Counterexample => counterexample::run(cfg, mapper),
    };
    run.with_context(|| format!("running the {} experiment", cfg.experiment.name()))
}

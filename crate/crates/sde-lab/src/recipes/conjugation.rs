//! Conjugation order: the transformed drifted process against the
//! conjugated SDE on the same noise, across dt halvings. Both sides carry
//! the same scheme order, so the deviation is pure discretization error
//! and each halving should shrink it by roughly the square root of two.

use anyhow::Result;

use sde_lab_core::grid::sample_field;
use sde_lab_core::kolmogorov::{solve_backward_pde, SolveOptions};
use sde_lab_core::sde::{conjugation_deviation, PathConfig};
use sde_lab_core::zvonkin::build_transform;

use crate::config::ExperimentConfig;
use crate::manifest::CheckRecord;
use crate::mapper::AnyMapper;
use crate::table::{Cell, Table};

use super::{CoreExt, RecipeOutput};

pub fn run(cfg: &ExperimentConfig, mapper: &AnyMapper) -> Result<RecipeOutput> {
    let grid = cfg.grid()?;
    let exps = cfg.exponents()?;
    let b = cfg.drift_spec()?;
    let f = sample_field(&b, &grid).core("drift field")?;
    let opts = SolveOptions {
        tol: cfg.thresholds.solver_tol,
        max_iterations: cfg.thresholds.max_iterations,
        seed: cfg.mc.seed,
    };
    let map = build_transform(solve_backward_pde(&b, &f, &exps, &opts).core("solve")?).core("transform")?;

    let halvings = cfg.sweep.halvings.expect("resolved conjugation config carries halvings");
    let x0 = cfg.x0();
    let mut out = RecipeOutput::new();
    let mut levels = Table::new("levels", &["dt", "sup_mean_deviation", "final_mean_deviation", "n_used"]);
    let mut deviations = Vec::with_capacity(halvings + 1);
    let mut dts = Vec::with_capacity(halvings + 1);
    for k in 0..=halvings {
        let dt = cfg.mc.dt / f64::powi(2.0, k as i32);
        let pc = PathConfig::new(cfg.mc.n, dt, grid.t0(), grid.t1(), cfg.mc.seed).core("mc")?;
        let rep = conjugation_deviation(&map, &b, &pc, &x0, mapper).core("deviation")?;
        levels.push_row(vec![
            Cell::Float(dt),
            Cell::Float(rep.sup_mean_deviation),
            Cell::Float(rep.final_mean_deviation),
            Cell::from(rep.n_used),
        ]);
        deviations.push(rep.sup_mean_deviation);
        dts.push(dt);
    }
    out.tables.push(levels);

    let mut factors = Table::new("factors", &["dt_coarse", "dt_fine", "factor"]);
    let (lo, hi) = (cfg.thresholds.factor_low, cfg.thresholds.factor_high);
    let mut all_in_window = true;
    let mut printed = Vec::new();
    for k in 0..halvings {
        let factor = if deviations[k + 1] > 0.0 { deviations[k] / deviations[k + 1] } else { f64::INFINITY };
        factors.push_row(vec![Cell::Float(dts[k]), Cell::Float(dts[k + 1]), Cell::Float(factor)]);
        all_in_window &= factor >= lo && factor <= hi;
        printed.push(format!("{factor:.3}"));
    }
    out.tables.push(factors);

    out.checks.push(CheckRecord::new(
        "halving-factors",
        all_in_window,
        format!("per-halving factors [{}] against [{lo}, {hi}]", printed.join(", ")),
    ));

    Ok(out)
}

//! Backward solve `u_t + (1/2) Laplacian u + b . grad u + f = 0`,
//! `u(t1) = 0`, with the fixed-point trace, the interior residual, and the
//! gradient embedding ratio as diagnostics.

use anyhow::Result;

use sde_lab_core::grid::sample_field;
use sde_lab_core::kolmogorov::{gradient_sup_bound_check, pde_residual, solve_backward_pde, SolveOptions};

use crate::config::ExperimentConfig;
use crate::grid_io::write_grid_function;
use crate::manifest::CheckRecord;
use crate::table::{Cell, Table};

use super::{CoreExt, RecipeOutput};

pub fn run(cfg: &ExperimentConfig) -> Result<RecipeOutput> {
    let grid = cfg.grid()?;
    let exps = cfg.exponents()?;
    let b = cfg.drift_spec()?;
    // `resolved` guarantees a source for this experiment.
    let source_params = cfg.source.as_ref().expect("resolved pde config carries a source");
    let source = source_params.to_spec(grid.dim())?;
    let f = sample_field(&source, &grid).core("source field")?;
    let opts = SolveOptions {
        tol: cfg.thresholds.solver_tol,
        max_iterations: cfg.thresholds.max_iterations,
        seed: cfg.mc.seed,
    };
    let sol = solve_backward_pde(&b, &f, &exps, &opts).core("solve")?;
    let residual = pde_residual(&sol, &b, &f).core("residual")?;
    let embedding = gradient_sup_bound_check(&sol).core("embedding")?;

    let mut out = RecipeOutput::new();

    // Distances between successive iterates; a contraction shows as
    // ratios below one after the first step.
    let mut trace = Table::new("trace", &["iteration", "distance", "ratio"]);
    let mut worst_ratio: f64 = 0.0;
    for (i, d) in sol.trace().iter().enumerate() {
        let ratio = if i == 0 {
            Cell::Null
        } else {
            let prev = sol.trace()[i - 1];
            let r = if prev > 0.0 { d / prev } else { 0.0 };
            worst_ratio = worst_ratio.max(r);
            Cell::Float(r)
        };
        trace.push_row(vec![Cell::from(i), Cell::Float(*d), ratio]);
    }
    out.tables.push(trace);

    let [norm_u, norm_ut, norm_grad, norm_hess] = sol.components();
    let cal = sol.calibration();
    let mut solution = Table::new(
        "solution",
        &[
            "x_norm", "norm_u", "norm_ut", "norm_grad", "norm_hess", "grad_sup", "residual",
            "embedding_ratio", "threshold", "quasi_constant", "duhamel_constant",
        ],
    );
    solution.push_row(vec![
        Cell::Float(sol.x_norm()),
        Cell::Float(norm_u),
        Cell::Float(norm_ut),
        Cell::Float(norm_grad),
        Cell::Float(norm_hess),
        Cell::Float(embedding.grad_sup),
        Cell::Float(residual),
        Cell::Float(embedding.ratio),
        cal.map_or(Cell::Null, |c| Cell::Float(c.threshold)),
        cal.map_or(Cell::Null, |c| Cell::Float(c.quasi_constant)),
        cal.map_or(Cell::Null, |c| Cell::Float(c.duhamel_constant)),
    ]);
    out.tables.push(solution);

    let contracted = sol.trace().len() <= 1 || worst_ratio < 1.0;
    out.checks.push(CheckRecord::new(
        "contraction-trace",
        contracted,
        format!("{} iterations, worst successive ratio {worst_ratio:.4}", sol.trace().len()),
    ));

    let terminal_sup = sol.u().sup_magnitude_at(grid.time_nodes() - 1);
    out.checks.push(CheckRecord::new(
        "terminal-condition",
        terminal_sup <= 1e-12,
        format!("sup |u(t1, .)| = {terminal_sup:.3e}"),
    ));

    out.checks.push(CheckRecord::new(
        "residual-finite",
        residual.is_finite(),
        format!("interior residual {residual:.6e}"),
    ));

    if cfg.retention == crate::config::Retention::Full {
        out.artifacts.push((String::from("solution_u.csv"), write_grid_function(sol.u()).into_bytes()));
    }

    Ok(out)
}

//! Transform construction `Phi = id + u` from the companion solve with
//! the drift itself as the source, plus the full diffeomorphism
//! certificate.

use anyhow::Result;

use sde_lab_core::grid::sample_field;
use sde_lab_core::kolmogorov::{solve_backward_pde, SolveOptions};
use sde_lab_core::zvonkin::build_transform;

use crate::config::ExperimentConfig;
use crate::grid_io::write_grid_function;
use crate::manifest::CheckRecord;
use crate::table::{Cell, Table};

use super::{CoreExt, RecipeOutput};

pub fn run(cfg: &ExperimentConfig) -> Result<RecipeOutput> {
    let grid = cfg.grid()?;
    let exps = cfg.exponents()?;
    let b = cfg.drift_spec()?;
    let f = sample_field(&b, &grid).core("drift field")?;
    let opts = SolveOptions {
        tol: cfg.thresholds.solver_tol,
        max_iterations: cfg.thresholds.max_iterations,
        seed: cfg.mc.seed,
    };
    let sol = solve_backward_pde(&b, &f, &exps, &opts).core("solve")?;
    let x_norm = sol.x_norm();
    let map = build_transform(sol).core("transform")?;
    let cert = map.certificate().clone();

    let mut out = RecipeOutput::new();

    let mut certificate = Table::new(
        "certificate",
        &[
            "sigma_min", "sigma_max", "margin_low", "margin_high", "properness_slack",
            "roundtrip_worst", "inverse_jacobian_dev", "passed",
        ],
    );
    certificate.push_row(vec![
        Cell::Float(cert.sigma_min),
        Cell::Float(cert.sigma_max),
        Cell::Float(cert.margin_low),
        Cell::Float(cert.margin_high),
        Cell::Float(cert.properness_slack),
        Cell::Float(cert.roundtrip_worst),
        Cell::Float(cert.inverse_jacobian_dev),
        Cell::Bool(cert.passed),
    ]);
    out.tables.push(certificate);

    let mut solution = Table::new("solution", &["x_norm", "sup_grad_u", "trusted_reach"]);
    solution.push_row(vec![
        Cell::Float(x_norm),
        Cell::Float(map.sup_gradient()),
        Cell::Float(map.trusted_reach()),
    ]);
    out.tables.push(solution);

    out.checks.push(CheckRecord::new(
        "diffeo-certificate",
        cert.passed,
        format!("round trip {:.3e}, inverse Jacobian gap {:.3e}", cert.roundtrip_worst, cert.inverse_jacobian_dev),
    ));
    out.checks.push(CheckRecord::new(
        "jacobian-window",
        cert.margin_low >= 0.0 && cert.margin_high >= 0.0,
        format!("singular values in [{:.4}, {:.4}] against [0.5, 2]", cert.sigma_min, cert.sigma_max),
    ));
    out.checks.push(CheckRecord::new(
        "round-trip",
        cert.roundtrip_worst <= 1e-8,
        format!("worst |Phi(Phi^-1(y)) - y| = {:.3e}", cert.roundtrip_worst),
    ));

    if cfg.retention == crate::config::Retention::Full {
        out.artifacts.push((String::from("transform_phi.csv"), write_grid_function(map.phi()).into_bytes()));
    }

    Ok(out)
}

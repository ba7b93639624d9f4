//! Norm oracles: the indicator closed form, the `L^{p,p} = L^p` identity
//! on seeded random step profiles, and the mixed norm of the configured
//! drift on the grid.

use anyhow::Result;

use sde_lab_core::grid::sample_field;
use sde_lab_core::lorentz::{lorentz_norm, mixed_lorentz_norm, LorentzQ};
use sde_lab_core::rng::PathStream;

use crate::config::ExperimentConfig;
use crate::manifest::CheckRecord;
use crate::table::{Cell, Table};

use super::{CoreExt, RecipeOutput};

/// Indicator fixture: value and measure of the single step. Any positive
/// pair exercises the closed form; these keep the report legible.
const INDICATOR_VALUE: f64 = 1.5;
const INDICATOR_MEASURE: f64 = 0.75;

fn rel_error(computed: f64, expected: f64) -> f64 {
    (computed - expected).abs() / expected.abs().max(f64::MIN_POSITIVE)
}

pub fn run(cfg: &ExperimentConfig) -> Result<RecipeOutput> {
    let exps = cfg.exponents()?;
    let (p, q) = (exps.p(), exps.q());
    let rel_tol = cfg.thresholds.rel_tol;
    let mut out = RecipeOutput::new();

    // One step of height c on measure m: norm = (p/q)^{1/q} c m^{1/p}.
    let computed = lorentz_norm(&[(INDICATOR_VALUE, INDICATOR_MEASURE)], p, LorentzQ::Finite(q))
        .core("indicator norm")?;
    let expected = (p / q).powf(1.0 / q) * INDICATOR_VALUE * INDICATOR_MEASURE.powf(1.0 / p);
    let indicator_rel = rel_error(computed, expected);

    let mut cases = Table::new("cases", &["case", "p", "q", "computed", "expected", "rel_error"]);
    cases.push_row(vec![
        Cell::from("indicator"),
        Cell::Float(p),
        Cell::Float(q),
        Cell::Float(computed),
        Cell::Float(expected),
        Cell::Float(indicator_rel),
    ]);
    out.tables.push(cases);
    out.checks.push(CheckRecord::new(
        "indicator-closed-form",
        indicator_rel <= rel_tol,
        format!("relative error {indicator_rel:.3e} against tolerance {rel_tol:.1e}"),
    ));

    // Random step profiles: at matching indices the Lorentz norm must be
    // the plain integral norm computed directly from the pieces.
    let mut identity = Table::new("identity", &["sample", "pieces", "lorentz", "direct", "rel_error"]);
    let mut worst: f64 = 0.0;
    for k in 0..cfg.mc.n {
        let mut rng = PathStream::new(cfg.mc.seed, k as u64);
        let pieces = 1 + (rng.next_u64() % 6) as usize;
        let samples: Vec<(f64, f64)> = (0..pieces)
            .map(|_| (0.1 + 3.0 * rng.next_uniform(), 0.05 + 2.0 * rng.next_uniform()))
            .collect();
        let lorentz = lorentz_norm(&samples, p, LorentzQ::Finite(p)).core("step norm")?;
        let direct = samples.iter().map(|&(v, m)| m * v.powf(p)).sum::<f64>().powf(1.0 / p);
        let rel = rel_error(lorentz, direct);
        worst = worst.max(rel);
        identity.push_row(vec![
            Cell::from(k),
            Cell::from(pieces),
            Cell::Float(lorentz),
            Cell::Float(direct),
            Cell::Float(rel),
        ]);
    }
    out.tables.push(identity);
    out.checks.push(CheckRecord::new(
        "lorentz-lp-identity",
        worst <= rel_tol,
        format!("worst relative error {worst:.3e} over {} samples", cfg.mc.n),
    ));

    // Mixed norm of the drift over the grid horizon, with its slice count
    // for the record.
    let grid = cfg.grid()?;
    let field = sample_field(&cfg.drift_spec()?, &grid).core("drift field")?;
    let report = mixed_lorentz_norm(&field, &exps, (grid.t0(), grid.t1())).core("mixed norm")?;
    let mut mixed = Table::new("mixed", &["t0", "t1", "p", "q", "value", "slices"]);
    mixed.push_row(vec![
        Cell::Float(report.window.0),
        Cell::Float(report.window.1),
        Cell::Float(p),
        Cell::Float(q),
        Cell::Float(report.value),
        Cell::from(report.slice_norms.len()),
    ]);
    out.tables.push(mixed);
    out.checks.push(CheckRecord::new(
        "mixed-norm-finite",
        report.value.is_finite() && report.value >= 0.0,
        format!("drift mixed norm {}", report.value),
    ));

    Ok(out)
}

//! Fixed-point solver for the backward Kolmogorov equation
//! `u_t + (1/2) Laplacian u + b . grad u + f = 0`, `u(t1) = 0`, with the
//! drift and source in a critical mixed Lorentz class.
//!
//! The time reversal `v(s) = u(t1 - s)` turns the terminal-value problem
//! into `v_s - (1/2) Laplacian v = b~ . grad v + f~`, `v(0) = 0`, which the
//! Duhamel solver integrates directly; the fixed-point map iterates the
//! source through the gradient coupling. Contraction is not assumed: the
//! module measures the quasi-norm constant of the mixed norm and the
//! response constant of the Duhamel map on seeded probe fields, admits a
//! drift only when its norm sits below `1 / (2 c C1 max{1, T})`, and aborts
//! with the iteration trace if the measured ratios stop contracting.
//!
//! Solution accounting happens in the norm
//! `||u||_X = ||u|| + ||u_t|| + ||grad u|| + ||hess u||`, each term the
//! `L^{q,1}_t(L^p_x)` mixed norm; derivative caches are discrete (centered
//! stencils, one-sided at walls).

use crate::error::{Error, Result};
use crate::grid::{
    finite_diff, sample_field, DiffOp, DriftSpec, GridFunction, GridSpec, Rank,
};
use crate::heat::{duhamel_solve, KernelSpec};
use crate::lorentz::{
    mixed_lorentz_norm, partition_time, CriticalityClass, LorentzExponents, OuterIndex,
};
use crate::math;
use crate::rng::PathStream;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Which end of the time interval carries the zero condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeBoundary {
    /// `u(t0) = 0`, forward evolution.
    ForwardZeroStart,
    /// `u(t1) = 0`, terminal-value problem.
    BackwardZeroEnd,
}

/// Measured contraction data for one grid and exponent pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionCalibration {
    /// Largest `||f+g|| / (||f|| + ||g||)` over seeded random pairs, at
    /// least 1: the effective quasi-norm constant of the mixed norm.
    pub quasi_constant: f64,
    /// Largest response `||Duhamel(b . grad w)||_X / (||b|| ||w||_X max{1,T})`
    /// over seeded probe drifts and fields.
    pub duhamel_constant: f64,
    /// Time span the calibration ran on.
    pub span: f64,
    /// Admissible drift norm: `1 / (2 c C1 max{1, T})`.
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Stopping distance between iterates in the `X` norm.
    pub tol: f64,
    pub max_iterations: usize,
    /// Seed for the calibration probes.
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-6, max_iterations: 200, seed: 0x1ab0_5eed }
    }
}

/// A solved Kolmogorov equation with cached discrete derivatives and the
/// norm accounting that certified the fixed point.
#[derive(Debug, Clone)]
pub struct PdeSolution {
    u: GridFunction,
    u_t: GridFunction,
    grad: GridFunction,
    hess: GridFunction,
    exps: LorentzExponents,
    boundary: TimeBoundary,
    components: [f64; 4],
    trace: Vec<f64>,
    calibration: Option<ContractionCalibration>,
}

impl PdeSolution {
    /// Wraps an externally built field (synthetic fixtures, oracles). The
    /// tagged boundary slice must vanish identically.
    pub fn from_field(
        u: GridFunction,
        exps: &LorentzExponents,
        boundary: TimeBoundary,
    ) -> Result<PdeSolution> {
        if u.rank() != Rank::Vector {
            return Err(Error::ShapeMismatch(String::from(
                "solution fields are vector-valued, one component per drift component",
            )));
        }
        check_exponents(exps)?;
        let g = u.grid();
        let j = match boundary {
            TimeBoundary::ForwardZeroStart => 0,
            TimeBoundary::BackwardZeroEnd => g.time_cells(),
        };
        if u.sup_magnitude_at(j) != 0.0 {
            return Err(Error::InvalidConfig(format!(
                "boundary-in-time condition violated: |u| = {} at the tagged slice",
                u.sup_magnitude_at(j)
            )));
        }
        let (components, u_t, grad, hess) = x_components(&u, exps)?;
        Ok(PdeSolution {
            u,
            u_t,
            grad,
            hess,
            exps: *exps,
            boundary,
            components,
            trace: Vec::new(),
            calibration: None,
        })
    }

    pub fn u(&self) -> &GridFunction {
        &self.u
    }

    pub fn time_derivative(&self) -> &GridFunction {
        &self.u_t
    }

    pub fn gradient(&self) -> &GridFunction {
        &self.grad
    }

    pub fn hessian(&self) -> &GridFunction {
        &self.hess
    }

    pub fn exponents(&self) -> &LorentzExponents {
        &self.exps
    }

    pub fn boundary(&self) -> TimeBoundary {
        self.boundary
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.u.grid().t0(), self.u.grid().t1())
    }

    /// The four mixed norms: `u`, `u_t`, `grad u`, `hess u`.
    pub fn components(&self) -> [f64; 4] {
        self.components
    }

    pub fn x_norm(&self) -> f64 {
        self.components.iter().sum()
    }

    /// X-norm distance between successive fixed-point iterates.
    pub fn trace(&self) -> &[f64] {
        &self.trace
    }

    pub fn calibration(&self) -> Option<&ContractionCalibration> {
        self.calibration.as_ref()
    }
}

fn check_exponents(exps: &LorentzExponents) -> Result<()> {
    if exps.r() != OuterIndex::One {
        return Err(Error::InvalidExponents(String::from(
            "solution accounting runs in L^{q,1} time norms: outer index must be 1",
        )));
    }
    Ok(())
}

/// The four mixed norms plus the derivative caches of a field.
fn x_components(
    u: &GridFunction,
    exps: &LorentzExponents,
) -> Result<([f64; 4], GridFunction, GridFunction, GridFunction)> {
    let g = u.grid();
    let window = (g.t0(), g.t1());
    let u_t = finite_diff(u, DiffOp::TimeDeriv)?;
    let grad = finite_diff(u, DiffOp::Grad)?;
    let hess = finite_diff(u, DiffOp::Hessian)?;
    let c = [
        mixed_lorentz_norm(u, exps, window)?.value,
        mixed_lorentz_norm(&u_t, exps, window)?.value,
        mixed_lorentz_norm(&grad, exps, window)?.value,
        mixed_lorentz_norm(&hess, exps, window)?.value,
    ];
    Ok((c, u_t, grad, hess))
}

fn x_distance(diff: &GridFunction, exps: &LorentzExponents) -> Result<f64> {
    let (c, _, _, _) = x_components(diff, exps)?;
    Ok(c.iter().sum())
}

/// Reverses the time slices in place of the labels: slice `j` of the output
/// is slice `M - j` of the input. An involution; `t0`/`t1` keep their
/// original values, so reversed fields are only for internal stepping.
fn reverse_time(f: &GridFunction) -> GridFunction {
    let g = f.grid();
    let nsp = g.spatial_nodes();
    let ncomp = f.ncomp();
    let m = g.time_cells();
    let mut values = vec![0.0; f.values().len()];
    for j in 0..=m {
        let src = &f.values()[j * nsp * ncomp..(j + 1) * nsp * ncomp];
        values[(m - j) * nsp * ncomp..(m - j + 1) * nsp * ncomp].copy_from_slice(src);
    }
    GridFunction::from_values(g, f.rank(), values, f.label()).expect("same shape")
}

/// `out_c = sum_a b_a d_a w_c` from a drift slice view and a gradient field.
fn dot_gradient(b: &GridFunction, grad_w: &GridFunction, out: &mut GridFunction) {
    let g = b.grid().clone();
    let d = g.dim();
    for j in 0..g.time_nodes() {
        for s in 0..g.spatial_nodes() {
            for c in 0..d {
                let mut acc = 0.0;
                for a in 0..d {
                    acc += b.value(j, s, a) * grad_w.value(j, s, c * d + a);
                }
                out.set(j, s, c, acc);
            }
        }
    }
}

/// Smooth seeded mixture of Gaussian bumps for calibration probes.
fn probe_bumps(g: &GridSpec, stream: &mut PathStream, comps: usize) -> Vec<(f64, [f64; 3], f64)> {
    let mut bumps = Vec::new();
    for _ in 0..2 * comps {
        let amp = 0.5 + stream.next_uniform();
        let sign = if stream.next_uniform() < 0.5 { -1.0 } else { 1.0 };
        let mut center = [0.0; 3];
        for c in center.iter_mut().take(g.dim()) {
            *c = (stream.next_uniform() - 0.5) * g.extent();
        }
        let width = (0.3 + 0.3 * stream.next_uniform()) * g.extent();
        bumps.push((sign * amp, center, width));
    }
    bumps
}

fn eval_bump(bumps: &[(f64, [f64; 3], f64)], which: usize, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (amp, center, width) in bumps.iter().skip(2 * which).take(2) {
        let mut r2 = 0.0;
        for (i, xi) in x.iter().enumerate() {
            r2 += (xi - center[i]) * (xi - center[i]);
        }
        acc += amp * math::exp(-r2 / (2.0 * width * width));
    }
    acc
}

/// Measures the quasi-norm constant and the Duhamel response constant on
/// the given grid, and derives the admissible drift norm
/// `1 / (2 c C1 max{1, T})`. Deterministic in the seed.
pub fn calibrate_contraction(
    grid: &GridSpec,
    exps: &LorentzExponents,
    seed: u64,
) -> Result<ContractionCalibration> {
    check_exponents(exps)?;
    if grid.time_cells() < 2 {
        return Err(Error::InvalidGrid(String::from(
            "calibration needs at least two time cells",
        )));
    }
    let window = (grid.t0(), grid.t1());
    let span = grid.t1() - grid.t0();
    let d = grid.dim();

    // Quasi-norm constant: sampled triangle-inequality defect.
    let mut quasi: f64 = 1.0;
    for pair in 0..32u64 {
        let mut stream = PathStream::new(seed, pair);
        let mut fv = Vec::with_capacity(grid.time_nodes() * grid.spatial_nodes());
        let mut gv = Vec::with_capacity(fv.capacity());
        for _ in 0..fv.capacity() {
            fv.push(2.0 * stream.next_uniform() - 1.0);
            gv.push(2.0 * stream.next_uniform() - 1.0);
        }
        let f = GridFunction::from_values(grid, Rank::Scalar, fv, "probe_f")?;
        let g = GridFunction::from_values(grid, Rank::Scalar, gv, "probe_g")?;
        let nf = mixed_lorentz_norm(&f, exps, window)?.value;
        let ng = mixed_lorentz_norm(&g, exps, window)?.value;
        let nsum = mixed_lorentz_norm(&f.add(&g)?, exps, window)?.value;
        if nf + ng > 0.0 {
            quasi = quasi.max(nsum / (nf + ng));
        }
    }

    // Duhamel response constant on smooth probe pairs. Probe fields carry a
    // `t - t0` factor so they vanish at the forward boundary like genuine
    // iterate differences.
    let ks = KernelSpec::semigroup(d);
    let mut response: f64 = 0.0;
    for probe in 0..6u64 {
        let mut stream = PathStream::new(seed ^ 0x00c1_0000, probe);
        let b_bumps = probe_bumps(grid, &mut stream, d);
        let w_bumps = probe_bumps(grid, &mut stream, d);
        let b = GridFunction::sample_vector(grid, "probe_b", |_, x, out| {
            for (c, o) in out.iter_mut().enumerate() {
                *o = eval_bump(&b_bumps, c, x);
            }
        });
        let w = GridFunction::sample_vector(grid, "probe_w", |t, x, out| {
            for (c, o) in out.iter_mut().enumerate() {
                *o = (t - grid.t0()) / span * eval_bump(&w_bumps, c, x);
            }
        });
        let b_norm = mixed_lorentz_norm(&b, exps, window)?.value;
        let w_norm = x_distance(&w, exps)?;
        if b_norm == 0.0 || w_norm == 0.0 {
            continue;
        }
        let grad_w = finite_diff(&w, DiffOp::Grad)?;
        let mut source = GridFunction::zeros(grid, Rank::Vector, "probe_src");
        dot_gradient(&b, &grad_w, &mut source);
        let image = duhamel_solve(&ks, &source)?;
        let image_norm = x_distance(&image, exps)?;
        response = response.max(image_norm / (b_norm * w_norm * span.max(1.0)));
    }
    if response == 0.0 {
        return Err(Error::InvalidConfig(String::from(
            "calibration probes produced no usable response",
        )));
    }
    Ok(ContractionCalibration {
        quasi_constant: quasi,
        duhamel_constant: response,
        span,
        threshold: 1.0 / (2.0 * quasi * response * span.max(1.0)),
    })
}

/// Solves the terminal-value problem `u_t + (1/2) Laplacian u + b . grad u +
/// f = 0`, `u(t1) = 0`, on the grid of `f` by fixed-point iteration in the
/// X norm.
pub fn solve_backward_pde(
    b: &DriftSpec,
    f: &GridFunction,
    exps: &LorentzExponents,
    opts: &SolveOptions,
) -> Result<PdeSolution> {
    check_exponents(exps)?;
    let g = f.grid().clone();
    if f.rank() != Rank::Vector {
        return Err(Error::ShapeMismatch(String::from("source must be a vector field")));
    }
    if b.dim() != g.dim() {
        return Err(Error::ShapeMismatch(format!(
            "drift dimension {} vs grid dimension {}",
            b.dim(),
            g.dim()
        )));
    }
    if g.time_cells() < 2 {
        return Err(Error::InvalidGrid(String::from("solver needs at least two time cells")));
    }
    let window = (g.t0(), g.t1());
    let b_field = sample_field(b, &g)?;
    let b_norm = mixed_lorentz_norm(&b_field, exps, window)?.value;
    let cal = calibrate_contraction(&g, exps, opts.seed)?;
    if b_norm >= cal.threshold {
        return Err(Error::IntervalTooLong { norm: b_norm, threshold: cal.threshold });
    }

    let ks = KernelSpec::semigroup(g.dim());
    let b_rev = reverse_time(&b_field);
    let f_rev = reverse_time(f);
    let mut v = GridFunction::zeros(&g, Rank::Vector, "pde_iterate");
    let mut trace: Vec<f64> = Vec::new();
    let mut consecutive_bad = 0usize;
    let ratio_cap = 1.0 / (2.0 * cal.quasi_constant);
    let mut worst_ratio: f64 = 0.0;
    let mut converged = false;

    for iteration in 1..=opts.max_iterations {
        let grad_v = finite_diff(&v, DiffOp::Grad)?;
        let mut source = GridFunction::zeros(&g, Rank::Vector, "pde_source");
        dot_gradient(&b_rev, &grad_v, &mut source);
        let source = source.add(&f_rev)?;
        let next = duhamel_solve(&ks, &source)?;
        let dist = x_distance(&next.sub(&v)?, exps)?;
        if let Some(&prev) = trace.last() {
            if prev > 0.0 {
                let ratio = dist / prev;
                if dist > opts.tol {
                    worst_ratio = worst_ratio.max(ratio);
                }
                if ratio >= 1.0 {
                    consecutive_bad += 1;
                    if consecutive_bad >= 3 {
                        return Err(Error::NoContraction { iterations: iteration, last_ratio: ratio });
                    }
                } else {
                    consecutive_bad = 0;
                }
            }
        }
        trace.push(dist);
        v = next;
        if dist < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        let last_ratio = if trace.len() >= 2 {
            trace[trace.len() - 1] / trace[trace.len() - 2].max(1e-300)
        } else {
            f64::INFINITY
        };
        return Err(Error::NoContraction { iterations: opts.max_iterations, last_ratio });
    }
    if worst_ratio >= ratio_cap {
        return Err(Error::NoContraction { iterations: trace.len(), last_ratio: worst_ratio });
    }

    let u = reverse_time(&v);
    let (components, u_t, grad, hess) = x_components(&u, exps)?;
    Ok(PdeSolution {
        u,
        u_t,
        grad,
        hess,
        exps: *exps,
        boundary: TimeBoundary::BackwardZeroEnd,
        components,
        trace,
        calibration: Some(cal),
    })
}

/// Splits the grid's time window into maximal subintervals on which the
/// drift norm stays below the calibrated contraction threshold.
pub fn admissible_partition(
    b: &DriftSpec,
    grid: &GridSpec,
    exps: &LorentzExponents,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let cal = calibrate_contraction(grid, exps, seed)?;
    let b_field = sample_field(b, grid)?;
    partition_time(&b_field, exps, cal.threshold, (grid.t0(), grid.t1()))
}

/// Mixed norm of `u_t +- (1/2) Laplacian u + b . grad u + f` over interior
/// nodes, using the solution's cached derivatives. The sign of the
/// Laplacian follows the boundary tag (backward: `+`). Interior means at
/// least `min(6 sqrt(span), extent/2)` from the walls: the zero-extension
/// boundary layer is excluded.
pub fn pde_residual(sol: &PdeSolution, b: &DriftSpec, f: &GridFunction) -> Result<f64> {
    let g = sol.u().grid().clone();
    if f.grid() != &g {
        return Err(Error::ShapeMismatch(String::from("source grid differs from solution grid")));
    }
    if b.dim() != g.dim() {
        return Err(Error::ShapeMismatch(String::from("drift dimension differs from solution")));
    }
    let sign = match sol.boundary() {
        TimeBoundary::BackwardZeroEnd => 0.5,
        TimeBoundary::ForwardZeroStart => -0.5,
    };
    let b_field = sample_field(b, &g)?;
    let d = g.dim();
    let mut residual = GridFunction::zeros(&g, Rank::Vector, "residual");
    for j in 0..g.time_nodes() {
        for s in 0..g.spatial_nodes() {
            for c in 0..d {
                let mut lap = 0.0;
                let mut adv = 0.0;
                for a in 0..d {
                    lap += sol.hess.value(j, s, (c * d + a) * d + a);
                    adv += b_field.value(j, s, a) * sol.grad.value(j, s, c * d + a);
                }
                let r = sol.u_t.value(j, s, c) + sign * lap + adv + f.value(j, s, c);
                residual.set(j, s, c, r);
            }
        }
    }
    let span = g.t1() - g.t0();
    let margin = (6.0 * math::sqrt(span)).min(g.extent() / 2.0);
    let masked = residual.masked_interior(margin);
    Ok(mixed_lorentz_norm(&masked, sol.exponents(), (g.t0(), g.t1()))?.value)
}

/// Sup-gradient embedding report: the measured constant in
/// `sup |grad u| <= C (||u_t|| + ||hess u||)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingReport {
    pub grad_sup: f64,
    pub bracket: f64,
    pub ratio: f64,
}

/// Checks the critical-exponent gradient embedding on a solution. Only
/// claimed on the critical line `2/q + d/p = 1`, so other exponents are
/// rejected.
pub fn gradient_sup_bound_check(sol: &PdeSolution) -> Result<EmbeddingReport> {
    let d = sol.u().grid().dim();
    if sol.exponents().criticality_class(d) != CriticalityClass::Critical {
        return Err(Error::InvalidExponents(format!(
            "gradient embedding holds on the critical line; kappa = {}",
            sol.exponents().criticality(d)
        )));
    }
    let grad_sup = sol.gradient().sup_magnitude();
    let bracket = sol.components()[1] + sol.components()[3];
    let ratio = if bracket > 0.0 { grad_sup / bracket } else { 0.0 };
    Ok(EmbeddingReport { grad_sup, bracket, ratio })
}

/// Two-problem stability comparison: difference norms against the driving
/// quantity `||b1 - b2|| + ||f1 - f2||`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub x_norm_diff: f64,
    pub sup_diff: f64,
    pub grad_sup_diff: f64,
    pub driving: f64,
    /// `x_norm_diff / driving`, `sup_diff / driving`, `grad_sup_diff / driving`.
    pub ratios: [f64; 3],
}

pub fn stability_compare(
    b1: &DriftSpec,
    b2: &DriftSpec,
    f1: &GridFunction,
    f2: &GridFunction,
    exps: &LorentzExponents,
    opts: &SolveOptions,
) -> Result<StabilityReport> {
    if f1.grid() != f2.grid() {
        return Err(Error::ShapeMismatch(String::from("sources live on different grids")));
    }
    let sol1 = solve_backward_pde(b1, f1, exps, opts)?;
    let sol2 = solve_backward_pde(b2, f2, exps, opts)?;
    let g = f1.grid().clone();
    let window = (g.t0(), g.t1());
    let diff = sol1.u().sub(sol2.u())?;
    let x_norm_diff = x_distance(&diff, exps)?;
    let sup_diff = diff.sup_magnitude();
    let grad_sup_diff = finite_diff(&diff, DiffOp::Grad)?.sup_magnitude();
    let b_diff = sample_field(b1, &g)?.sub(&sample_field(b2, &g)?)?;
    let driving = mixed_lorentz_norm(&b_diff, exps, window)?.value
        + mixed_lorentz_norm(&f1.sub(f2)?, exps, window)?.value;
    let ratios = if driving > 0.0 {
        [x_norm_diff / driving, sup_diff / driving, grad_sup_diff / driving]
    } else {
        [0.0; 3]
    };
    Ok(StabilityReport { x_norm_diff, sup_diff, grad_sup_diff, driving, ratios })
}

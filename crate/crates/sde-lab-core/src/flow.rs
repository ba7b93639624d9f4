//! Stochastic flows built from the transform, and their regularity.
//!
//! A composed flow certifies solvability over a long horizon by chaining
//! admissible windows: the drift norm is small enough on each window for
//! the companion PDE to contract, and each window carries its own
//! transform with a passing diffeomorphism certificate. The flow itself is
//! evaluated by Euler-Maruyama on one global step lattice whose increments
//! are indexed by absolute step position, so restriction and composition
//! of flow maps agree bit for bit with direct simulation.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{sample_field, DriftSpec, GridSpec, MAX_DIM};
use crate::kolmogorov::{admissible_partition, solve_backward_pde, SolveOptions};
use crate::linalg::hs_norm;
use crate::lorentz::LorentzExponents;
use crate::math;
use crate::rng::PathStream;
use crate::sde::{
    exp_functional_moment, simulate_brownian, InitialLaw, PathConfig, PathMapper,
    DIVERGENCE_BOUND,
};
use crate::zvonkin::{build_transform, FlowMap};

/// A flow over a long horizon, one certified transform per window.
#[derive(Debug, Clone)]
pub struct ComposedFlow {
    drift: DriftSpec,
    exps: LorentzExponents,
    grid: GridSpec,
    intervals: Vec<(f64, f64)>,
    maps: Vec<FlowMap>,
}

impl ComposedFlow {
    pub fn drift(&self) -> &DriftSpec {
        &self.drift
    }

    pub fn exponents(&self) -> &LorentzExponents {
        &self.exps
    }

    /// Grid the construction ran on; windows reuse its spatial lattice.
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Adjacent windows share their endpoint exactly.
    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn maps(&self) -> &[FlowMap] {
        &self.maps
    }

    pub fn horizon(&self) -> (f64, f64) {
        (self.grid.t0(), self.grid.t1())
    }

    /// The window containing `t` (the last one for the right endpoint).
    pub fn map_covering(&self, t: f64) -> Option<(usize, &FlowMap)> {
        for (i, &(a, b)) in self.intervals.iter().enumerate() {
            if t >= a - 1e-12 && t <= b + 1e-12 {
                return Some((i, &self.maps[i]));
            }
        }
        None
    }
}

/// Builds one window's transform, bisecting on the cell lattice when the
/// window is too long for the transform even though it contracts: the
/// contraction threshold and the gradient bound are calibrated against
/// different constants and neither dominates the other a priori.
fn build_windows(
    b: &DriftSpec,
    grid: &GridSpec,
    exps: &LorentzExponents,
    opts: &SolveOptions,
    window: (f64, f64),
    depth: usize,
    out: &mut Vec<((f64, f64), FlowMap)>,
) -> Result<()> {
    let (a, c) = window;
    let sub = grid.with_time_window(a, c)?;
    if sub.time_cells() < 2 {
        return Err(Error::InvalidGrid(String::from(
            "a partition window covers fewer than two time cells; refine tau",
        )));
    }
    let f = sample_field(b, &sub)?;
    let attempt = solve_backward_pde(b, &f, exps, opts).and_then(build_transform);
    match attempt {
        Ok(map) => {
            if !map.certificate().passed {
                return Err(Error::InversionFailed { residual: map.certificate().roundtrip_worst });
            }
            out.push(((a, c), map));
            Ok(())
        }
        Err(
            Error::GradientTooLarge { .. }
            | Error::IntervalTooLong { .. }
            | Error::NoContraction { .. },
        ) if sub.time_cells() >= 4 && depth < 16 => {
            let mid = a + sub.tau() * ((sub.time_cells() / 2) as f64);
            build_windows(b, grid, exps, opts, (a, mid), depth + 1, out)?;
            build_windows(b, grid, exps, opts, (mid, c), depth + 1, out)
        }
        Err(e) => Err(e),
    }
}

/// Builds the composed flow for `b` over the time window of `grid`.
///
/// The horizon is first split by [`admissible_partition`]; each window
/// gets a backward solve with source `b` itself, then a transform. A
/// window that contracts but fails the transform's gradient bound is
/// bisected on the cell lattice and rebuilt. Construction aborts on any
/// window that cannot be certified: a flow is only returned whole.
pub fn build_flow(
    b: &DriftSpec,
    grid: &GridSpec,
    exps: &LorentzExponents,
    opts: &SolveOptions,
) -> Result<ComposedFlow> {
    let coarse = admissible_partition(b, grid, exps, opts.seed)?;
    let mut built = Vec::with_capacity(coarse.len());
    for &(a, c) in &coarse {
        build_windows(b, grid, exps, opts, (a, c), 0, &mut built)?;
    }
    let mut intervals = Vec::with_capacity(built.len());
    let mut maps = Vec::with_capacity(built.len());
    for (window, map) in built {
        intervals.push(window);
        maps.push(map);
    }
    Ok(ComposedFlow {
        drift: b.clone(),
        exps: *exps,
        grid: grid.clone(),
        intervals,
        maps,
    })
}

fn lattice_index(t: f64, t0: f64, dt: f64) -> Result<usize> {
    let k = (t - t0) / dt;
    let rounded = math::round(k);
    if math::abs(k - rounded) > 1e-9 || rounded < 0.0 {
        return Err(Error::InvalidConfig(String::from(
            "time is not a node of the global step lattice",
        )));
    }
    Ok(rounded as usize)
}

/// Flow value `phi(s, t, x)` along one path of the ensemble.
///
/// Steps run on the global lattice `T0 + k dt`; increment `k` always comes
/// from the same position of the path's stream, whichever window is being
/// evaluated. Consequently `phi(s, t, .) = phi(u, t, .) o phi(s, u, .)`
/// holds exactly, not just in distribution, for lattice times `s <= u <=
/// t`: both sides perform the identical arithmetic.
pub fn flow_point(
    flow: &ComposedFlow,
    s: f64,
    t: f64,
    x: &[f64],
    dt: f64,
    seed: u64,
    path: u64,
) -> Result<Vec<f64>> {
    let dim = flow.grid.dim();
    if x.len() != dim {
        return Err(Error::ShapeMismatch(String::from("point dimension does not match flow")));
    }
    let (t0, t1) = flow.horizon();
    if s < t0 - 1e-9 || t > t1 + 1e-9 || s > t + 1e-12 {
        return Err(Error::IntervalOutOfRange { start: s, end: t });
    }
    let ks = lattice_index(s, t0, dt)?;
    let kt = lattice_index(t, t0, dt)?;
    let mut stream = PathStream::new(seed, path);
    for _ in 0..ks * dim {
        stream.next_normal();
    }
    let mut state = x.to_vec();
    let scale = math::sqrt(dt);
    let mut bv = [0.0; MAX_DIM];
    for k in ks..kt {
        let tk = t0 + k as f64 * dt;
        flow.drift.eval_into(tk, &state, &mut bv[..dim])?;
        for a in 0..dim {
            state[a] += bv[a] * dt + scale * stream.next_normal();
        }
        let mut sup = 0.0;
        for &v in &state {
            if math::abs(v) > sup {
                sup = math::abs(v);
            }
        }
        if !sup.is_finite() || sup > DIVERGENCE_BOUND {
            return Err(Error::OutOfDomain(String::from("flow path diverged")));
        }
    }
    Ok(state)
}

/// One mollification level of the stability comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowLevelStats {
    pub epsilon: f64,
    /// `sup_k mean_i |phi_eps(t_k) - phi_ref(t_k)|^r` on shared noise.
    pub sup_moment: f64,
    /// Standard error of that mean at the time attaining the sup.
    pub sup_moment_se: f64,
    /// `E exp(2 int b_eps . dB - int |b_eps|^2 ds)` on driftless paths
    /// from the same start: the weak-existence gate at this level. Flows
    /// can only be compared where this stays bounded across levels.
    pub exp_moment: f64,
    pub exp_moment_heavy_tail: bool,
    /// `E |phi_eps(T)|^{2r-1}`, the companion moment of the stability
    /// argument at order `r`.
    pub terminal_moment: f64,
}

/// Stability of the flow across mollification levels of the drift.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowStabilityReport {
    pub r: f64,
    /// Finest supplied level; all gaps are measured against its flow.
    pub reference_epsilon: f64,
    /// Remaining levels, coarse to fine.
    pub levels: Vec<FlowLevelStats>,
    /// Whether the sup moments strictly decrease toward the reference.
    pub monotone_decreasing: bool,
}

/// Compares Euler-Maruyama flows of mollified drifts on shared noise.
///
/// The finest level in `eps_levels` (the last entry; levels must decrease
/// strictly) serves as the reference flow. Every coarser level is coupled
/// to it pathwise, increment by increment, so the reported gap moment
/// `sup_t E |phi_eps(t) - phi_ref(t)|^r` has no independent-sampling noise
/// floor and its decay is visible at desk-scale path counts.
pub fn flow_stability<M: PathMapper>(
    b: &DriftSpec,
    grid: &GridSpec,
    eps_levels: &[f64],
    x: &[f64],
    r: f64,
    cfg: &PathConfig,
    mapper: &M,
) -> Result<FlowStabilityReport> {
    let dim = b.dim();
    if x.len() != dim {
        return Err(Error::ShapeMismatch(String::from("start dimension does not match drift")));
    }
    if grid.dim() != dim {
        return Err(Error::ShapeMismatch(String::from("grid dimension does not match drift")));
    }
    if !(r > 0.0) {
        return Err(Error::InvalidConfig(String::from("moment order must be positive")));
    }
    if eps_levels.len() < 2 {
        return Err(Error::EmptyInput(String::from(
            "need at least one level beyond the reference",
        )));
    }
    for w in eps_levels.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::InvalidConfig(String::from("levels must be strictly decreasing")));
        }
    }
    if !(eps_levels[eps_levels.len() - 1] > 0.0) {
        return Err(Error::InvalidConfig(String::from("levels must be positive")));
    }
    let reference_epsilon = eps_levels[eps_levels.len() - 1];
    let b_ref = b.mollified(grid, reference_epsilon)?;
    let steps = cfg.steps();
    let init = InitialLaw::point(x);
    let brownian = simulate_brownian(cfg, &init, mapper)?;
    let mut levels = Vec::with_capacity(eps_levels.len() - 1);
    for &eps in &eps_levels[..eps_levels.len() - 1] {
        let b_eps = b.mollified(grid, eps)?;
        let moment_order = 2.0 * r - 1.0;
        let rows = mapper.map_paths(cfg.n, |i| {
            let mut stream = PathStream::new(cfg.seed, i as u64);
            let mut xa = [0.0; MAX_DIM];
            let mut xb = [0.0; MAX_DIM];
            xa[..dim].copy_from_slice(x);
            xb[..dim].copy_from_slice(x);
            let scale = math::sqrt(cfg.dt);
            let mut db = [0.0; MAX_DIM];
            let mut va = [0.0; MAX_DIM];
            let mut vb = [0.0; MAX_DIM];
            let mut gaps = vec![0.0; steps + 1];
            let mut bad = false;
            for k in 0..steps {
                let t = cfg.time_at(k);
                for a in 0..dim {
                    db[a] = scale * stream.next_normal();
                }
                if b_eps.eval_into(t, &xa[..dim], &mut va[..dim]).is_err()
                    || b_ref.eval_into(t, &xb[..dim], &mut vb[..dim]).is_err()
                {
                    bad = true;
                    break;
                }
                let mut sup = 0.0;
                let mut q = 0.0;
                for a in 0..dim {
                    xa[a] += va[a] * cfg.dt + db[a];
                    xb[a] += vb[a] * cfg.dt + db[a];
                    let g = xa[a] - xb[a];
                    q += g * g;
                    let m = if math::abs(xa[a]) > math::abs(xb[a]) {
                        math::abs(xa[a])
                    } else {
                        math::abs(xb[a])
                    };
                    if m > sup {
                        sup = m;
                    }
                }
                if !sup.is_finite() || sup > DIVERGENCE_BOUND {
                    bad = true;
                    break;
                }
                gaps[k + 1] = math::powf(math::sqrt(q), r);
            }
            let terminal = math::powf(math::norm2(&xa[..dim]), moment_order);
            (gaps, terminal, bad)
        });
        let mut sums = vec![0.0; steps + 1];
        let mut sums_sq = vec![0.0; steps + 1];
        let mut terminal_sum = 0.0;
        let mut n_used = 0usize;
        for (gaps, terminal, bad) in &rows {
            if *bad {
                continue;
            }
            n_used += 1;
            terminal_sum += terminal;
            for (k, g) in gaps.iter().enumerate() {
                sums[k] += g;
                sums_sq[k] += g * g;
            }
        }
        if n_used == 0 {
            return Err(Error::EmptyInput(String::from("every coupled path was flagged")));
        }
        let nf = n_used as f64;
        let mut best_k = 0usize;
        let mut best = -1.0;
        for k in 0..=steps {
            let m = sums[k] / nf;
            if m > best {
                best = m;
                best_k = k;
            }
        }
        let mean = sums[best_k] / nf;
        let var = (sums_sq[best_k] / nf - mean * mean).max(0.0);
        let se = if n_used > 1 { math::sqrt(var / (nf - 1.0)) } else { 0.0 };
        let gate = exp_functional_moment(2.0, -1.0, &b_eps, &brownian, mapper)?;
        levels.push(FlowLevelStats {
            epsilon: eps,
            sup_moment: best,
            sup_moment_se: se,
            exp_moment: gate.estimate,
            exp_moment_heavy_tail: gate.heavy_tail,
            terminal_moment: terminal_sum / nf,
        });
    }
    let mut monotone = true;
    for w in levels.windows(2) {
        if !(w[1].sup_moment < w[0].sup_moment) {
            monotone = false;
        }
    }
    Ok(FlowStabilityReport {
        r,
        reference_epsilon,
        levels,
        monotone_decreasing: monotone,
    })
}

/// One spatial-increment level of the derivative moments.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeLevel {
    pub h: f64,
    /// `E |Delta_h phi(T)|_HS^r` over symmetric difference quotients.
    pub estimate: f64,
    pub std_error: f64,
    pub n_used: usize,
}

/// Moments of symmetric difference quotients of the flow map.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport {
    pub r: f64,
    pub levels: Vec<DerivativeLevel>,
}

/// Estimates `E |Delta_h phi_{s,t}(x)|_HS^r` across increment levels.
///
/// For each level, `2d` starts `x +- h e_a` share every Brownian increment
/// along the window, the quotient matrix collects the columns
/// `(phi(x + h e_a) - phi(x - h e_a)) / 2h`, and the moment averages its
/// Hilbert-Schmidt norm to the `r`. Shared increments make the driftless
/// flow's quotient the identity matrix path by path, so that case reports
/// `d^{r/2}` with zero variance, and they keep the level-to-level
/// comparison free of resampling noise.
pub fn weak_derivative_moments<M: PathMapper>(
    flow: &ComposedFlow,
    x: &[f64],
    r: f64,
    h_levels: &[f64],
    cfg: &PathConfig,
    mapper: &M,
) -> Result<RegularityReport> {
    let dim = flow.grid.dim();
    if x.len() != dim {
        return Err(Error::ShapeMismatch(String::from("start dimension does not match flow")));
    }
    if !(r > 0.0) {
        return Err(Error::InvalidConfig(String::from("moment order must be positive")));
    }
    if h_levels.is_empty() {
        return Err(Error::EmptyInput(String::from("no increment levels")));
    }
    for w in h_levels.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::InvalidConfig(String::from("levels must be strictly decreasing")));
        }
    }
    if !(h_levels[h_levels.len() - 1] > 0.0) {
        return Err(Error::InvalidConfig(String::from("levels must be positive")));
    }
    let (t0, t1) = flow.horizon();
    if cfg.t0 < t0 - 1e-9 || cfg.t1 > t1 + 1e-9 {
        return Err(Error::IntervalOutOfRange { start: cfg.t0, end: cfg.t1 });
    }
    let steps = cfg.steps();
    let drift = flow.drift.clone();
    let mut levels = Vec::with_capacity(h_levels.len());
    for &h in h_levels {
        let rows = mapper.map_paths(cfg.n, |i| {
            let mut stream = PathStream::new(cfg.seed, i as u64);
            // 2d coupled starts: column a uses rows 2a (plus) and 2a+1
            // (minus) of this flat state table.
            let mut states = [[0.0; MAX_DIM]; 2 * MAX_DIM];
            for a in 0..dim {
                for s in 0..2 {
                    let row = &mut states[2 * a + s];
                    row[..dim].copy_from_slice(x);
                    row[a] += if s == 0 { h } else { -h };
                }
            }
            let scale = math::sqrt(cfg.dt);
            let mut db = [0.0; MAX_DIM];
            let mut bv = [0.0; MAX_DIM];
            let mut bad = false;
            'time: for k in 0..steps {
                let t = cfg.time_at(k);
                for a in 0..dim {
                    db[a] = scale * stream.next_normal();
                }
                for row in states.iter_mut().take(2 * dim) {
                    if drift.eval_into(t, &row[..dim], &mut bv[..dim]).is_err() {
                        bad = true;
                        break 'time;
                    }
                    let mut sup = 0.0;
                    for a in 0..dim {
                        row[a] += bv[a] * cfg.dt + db[a];
                        if math::abs(row[a]) > sup {
                            sup = math::abs(row[a]);
                        }
                    }
                    if !sup.is_finite() || sup > DIVERGENCE_BOUND {
                        bad = true;
                        break 'time;
                    }
                }
            }
            if bad {
                return (0.0, true);
            }
            let mut quotient = [0.0; MAX_DIM * MAX_DIM];
            for a in 0..dim {
                for c in 0..dim {
                    quotient[c * dim + a] =
                        (states[2 * a][c] - states[2 * a + 1][c]) / (2.0 * h);
                }
            }
            (math::powf(hs_norm(&quotient[..dim * dim]), r), false)
        });
        let values: Vec<f64> =
            rows.iter().filter(|(_, bad)| !bad).map(|(v, _)| *v).collect();
        if values.is_empty() {
            return Err(Error::EmptyInput(String::from("every quotient path was flagged")));
        }
        let nf = values.len() as f64;
        let mut sum = 0.0;
        for &v in &values {
            sum += v;
        }
        let mean = sum / nf;
        let mut ss = 0.0;
        for &v in &values {
            let d = v - mean;
            ss += d * d;
        }
        let se = if values.len() > 1 { math::sqrt(ss / (nf - 1.0) / nf) } else { 0.0 };
        levels.push(DerivativeLevel { h, estimate: mean, std_error: se, n_used: values.len() });
    }
    Ok(RegularityReport { r, levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::SerialMapper;

    fn mapper() -> SerialMapper {
        SerialMapper
    }

    fn opts() -> SolveOptions {
        SolveOptions { tol: 1e-7, ..SolveOptions::default() }
    }

    #[test]
    fn zero_drift_flow_is_one_identity_window() {
        let grid = GridSpec::new(2, 4.0, 0.5, 0.0, 0.5, 0.0625).unwrap();
        let b = DriftSpec::constant(vec![0.0, 0.0]).unwrap();
        let exps = LorentzExponents::critical(2, 4.0).unwrap();
        let flow = build_flow(&b, &grid, &exps, &opts()).unwrap();
        assert_eq!(flow.intervals(), &[(0.0, 0.5)]);
        assert_eq!(flow.maps().len(), 1);
        assert!(flow.maps()[0].sup_gradient() < 1e-12);
        assert!(flow.maps()[0].certificate().passed);
        // The flow map reduces to x + B; one step of the recursion per
        // lattice node, reproducible per path.
        let x = [0.25, -0.5];
        let a = flow_point(&flow, 0.0, 0.5, &x, 0.0625, 7, 3).unwrap();
        let b2 = flow_point(&flow, 0.0, 0.5, &x, 0.0625, 7, 3).unwrap();
        assert_eq!(a, b2);
    }

    #[test]
    fn flow_composition_is_exact_at_window_junctions() {
        // Drift strong enough to force a multi-window partition on [0, 1].
        let grid = GridSpec::new(1, 3.0, 0.125, 0.0, 1.0, 0.03125).unwrap();
        let b = DriftSpec::gaussian_bump(vec![2.2], vec![0.0], 0.6).unwrap();
        let exps = LorentzExponents::critical(1, 2.0).unwrap();
        let flow = build_flow(&b, &grid, &exps, &opts()).unwrap();
        assert!(flow.intervals().len() >= 2, "intervals {:?}", flow.intervals());
        for w in flow.intervals().windows(2) {
            assert_eq!(w[0].1, w[1].0, "windows must share endpoints exactly");
        }
        for map in flow.maps() {
            assert!(map.certificate().passed);
            assert!(map.certificate().sigma_min >= 0.5);
            assert!(map.certificate().sigma_max <= 2.0);
        }
        let dt = 0.015625;
        let junction = flow.intervals()[0].1;
        let x = [0.2];
        for path in 0..20u64 {
            let direct = flow_point(&flow, 0.0, 1.0, &x, dt, 99, path).unwrap();
            let middle = flow_point(&flow, 0.0, junction, &x, dt, 99, path).unwrap();
            let composed = flow_point(&flow, junction, 1.0, &middle, dt, 99, path).unwrap();
            assert_eq!(direct, composed, "path {path}");
        }
    }

    #[test]
    fn flow_point_rejects_off_lattice_times() {
        let grid = GridSpec::new(1, 3.0, 0.25, 0.0, 0.25, 0.03125).unwrap();
        let b = DriftSpec::constant(vec![0.0]).unwrap();
        let exps = LorentzExponents::critical(1, 2.0).unwrap();
        let flow = build_flow(&b, &grid, &exps, &opts()).unwrap();
        assert!(flow_point(&flow, 0.0, 0.2, &[0.0], 0.03125, 1, 0).is_err());
        assert!(flow_point(&flow, 0.0, 0.5, &[0.0], 0.03125, 1, 0).is_err());
        assert!(flow_point(&flow, 0.125, 0.0625, &[0.0], 0.03125, 1, 0).is_err());
    }

    #[test]
    fn driftless_quotients_equal_the_identity_exactly() {
        let grid = GridSpec::new(2, 4.0, 0.5, 0.0, 0.5, 0.0625).unwrap();
        let b = DriftSpec::constant(vec![0.0, 0.0]).unwrap();
        let exps = LorentzExponents::critical(2, 4.0).unwrap();
        let flow = build_flow(&b, &grid, &exps, &opts()).unwrap();
        let cfg = PathConfig::horizon(32, 0.0625, 0.5, 5).unwrap();
        let report =
            weak_derivative_moments(&flow, &[0.1, -0.2], 2.0, &[0.5, 0.25], &cfg, &mapper())
                .unwrap();
        for level in &report.levels {
            // Coupled increments cancel: the quotient is the identity
            // path by path up to summation rounding, so the moment is
            // d^{r/2} at rounding scale with rounding-scale variance.
            assert!(math::abs(level.estimate - 2.0) < 1e-12, "h = {}", level.h);
            assert!(level.std_error < 1e-12);
            assert_eq!(level.n_used, 32);
        }
    }

    #[test]
    fn bump_flow_quotients_are_stable_across_levels() {
        let grid = GridSpec::new(1, 3.0, 0.125, 0.0, 0.5, 0.03125).unwrap();
        let b = DriftSpec::gaussian_bump(vec![0.25], vec![0.0], 0.6).unwrap();
        let exps = LorentzExponents::critical(1, 2.0).unwrap();
        let flow = build_flow(&b, &grid, &exps, &opts()).unwrap();
        let cfg = PathConfig::horizon(2_000, 0.003125, 0.5, 17).unwrap();
        let report =
            weak_derivative_moments(&flow, &[0.1], 2.0, &[0.2, 0.1, 0.05], &cfg, &mapper())
                .unwrap();
        let coarse = report.levels[1].estimate;
        let fine = report.levels[2].estimate;
        // Symmetric quotients converge quadratically in h; the two finest
        // levels must agree far inside the percent scale.
        assert!(
            math::abs(coarse - fine) < 0.01 * fine,
            "levels {coarse} vs {fine}"
        );
        for level in &report.levels {
            assert!(level.estimate > 0.5 && level.estimate < 2.0, "estimate {}", level.estimate);
        }
    }

    #[test]
    fn mollified_flows_converge_to_the_reference() {
        // Outward inverse-radial drift: mollification acts analytically,
        // so levels differ only through the drift near the origin.
        let grid = GridSpec::new(2, 4.0, 0.5, 0.0, 0.25, 0.03125).unwrap();
        let b = DriftSpec::inverse_radial(2, 0.3, true, 0.0).unwrap();
        let cfg = PathConfig::horizon(2_000, 0.002, 0.25, 23).unwrap();
        let report = flow_stability(
            &b,
            &grid,
            &[0.4, 0.2, 0.1, 0.05],
            &[0.3, 0.0],
            1.0,
            &cfg,
            &mapper(),
        )
        .unwrap();
        assert_eq!(report.levels.len(), 3);
        assert_eq!(report.reference_epsilon, 0.05);
        assert!(report.monotone_decreasing, "levels {:?}", report.levels);
        for level in &report.levels {
            assert!(level.exp_moment.is_finite() && level.exp_moment > 0.0);
            assert!(level.terminal_moment.is_finite());
        }
    }

    #[test]
    fn stability_rejects_degenerate_level_lists() {
        let grid = GridSpec::new(1, 3.0, 0.25, 0.0, 0.25, 0.03125).unwrap();
        let b = DriftSpec::gaussian_bump(vec![0.2], vec![0.0], 0.5).unwrap();
        let cfg = PathConfig::horizon(8, 0.025, 0.25, 3).unwrap();
        assert!(flow_stability(&b, &grid, &[0.2], &[0.0], 1.0, &cfg, &mapper()).is_err());
        assert!(
            flow_stability(&b, &grid, &[0.1, 0.2], &[0.0], 1.0, &cfg, &mapper()).is_err()
        );
        assert!(
            flow_stability(&b, &grid, &[0.2, 0.1], &[0.0], 0.0, &cfg, &mapper()).is_err()
        );
    }
}

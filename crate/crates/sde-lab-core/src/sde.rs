//! Monte Carlo machinery for the drifted diffusions.
//!
//! Paths follow the Euler-Maruyama scheme with left-endpoint coefficient
//! evaluation, so every pathwise sum below is an Ito sum. A path is fully
//! determined by `(seed, path_index)` (see [`crate::rng`]): ensembles store
//! terminal states and per-path flags, never trajectories, and any
//! operation that needs a whole path replays it on demand. Replaying is
//! also how Girsanov reweighting shares Brownian increments with the
//! ensemble that produced them, without either side storing an increment.
//!
//! A path is flagged, excluded from every estimator, and counted when its
//! state leaves the [`DIVERGENCE_BOUND`] sup-norm box, a coefficient fails
//! to evaluate, or an exponential functional overflows.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{DriftSpec, GridFunction, GridSpec, Rank, MAX_DIM};
use crate::lorentz::{mixed_lorentz_norm, LorentzExponents};
use crate::math;
use crate::rng::PathStream;
use crate::zvonkin::{conjugated_sigma, FlowMap};

/// Sup-norm escape radius beyond which a path is written off as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Cap on log-scale exponents; `exp(700)` sits just under f64 overflow.
const LOG_EXP_CAP: f64 = 700.0;

/// Ensemble dimensions: `n` paths on `[t0, t1]` with step `dt`.
///
/// The step must tile the window; a zero-length window means zero steps
/// and every path sits at its initial point.
#[derive(Debug, Clone, PartialEq)]
pub struct PathConfig {
    pub n: usize,
    pub dt: f64,
    pub t0: f64,
    pub t1: f64,
    pub seed: u64,
}

impl PathConfig {
    pub fn new(n: usize, dt: f64, t0: f64, t1: f64, seed: u64) -> Result<PathConfig> {
        if n == 0 {
            return Err(Error::InvalidConfig(String::from("ensemble needs at least one path")));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidConfig(String::from("time step must be positive")));
        }
        if !(t1 >= t0) {
            return Err(Error::InvalidConfig(String::from("time window is reversed")));
        }
        let span = t1 - t0;
        let steps = math::round(span / dt);
        if math::abs(steps * dt - span) > 1e-9 * if span > 1.0 { span } else { 1.0 } {
            return Err(Error::InvalidConfig(format!(
                "step {dt} does not tile the window of length {span}"
            )));
        }
        Ok(PathConfig { n, dt, t0, t1, seed })
    }

    /// Window `[0, t]`.
    pub fn horizon(n: usize, dt: f64, t: f64, seed: u64) -> Result<PathConfig> {
        PathConfig::new(n, dt, 0.0, t, seed)
    }

    pub fn steps(&self) -> usize {
        math::round((self.t1 - self.t0) / self.dt) as usize
    }

    pub fn time_at(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }
}

/// Initial law of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    /// Every path starts at `x`.
    Point(Vec<f64>),
    /// Product Gaussian with the given mean and per-coordinate deviation.
    Gaussian { mean: Vec<f64>, std_dev: f64 },
}

impl InitialLaw {
    pub fn point(x: &[f64]) -> InitialLaw {
        InitialLaw::Point(x.to_vec())
    }

    /// Point mass at the origin of `R^dim`.
    pub fn origin(dim: usize) -> InitialLaw {
        InitialLaw::Point(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Point(x) => x.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
        }
    }

    /// Draws one start. A point mass consumes no randomness, so ensembles
    /// that differ only in their drift consume identical draw sequences.
    fn sample_into(&self, stream: &mut PathStream, out: &mut [f64]) {
        match self {
            InitialLaw::Point(x) => out.copy_from_slice(x),
            InitialLaw::Gaussian { mean, std_dev } => {
                for (a, m) in mean.iter().enumerate() {
                    out[a] = m + std_dev * stream.next_normal();
                }
            }
        }
    }
}

/// How an ensemble's paths were generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleKind {
    /// Driftless: `X = X_0 + B`.
    Brownian,
    /// Euler-Maruyama with a drift coefficient.
    Drifted,
    /// `dY = sigma~(t, Y) dB` for a conjugated diffusion coefficient.
    Conjugated,
}

/// Per-path map fanned out over `0..n`, outputs in path order.
///
/// Because each path regenerates from `(seed, path_index)` alone and the
/// floating-point reductions downstream always run serially in path order,
/// estimates are bit-identical however the map is scheduled.
pub trait PathMapper: Sync {
    fn map_paths<T: Send, F: Fn(usize) -> T + Sync>(&self, n: usize, f: F) -> Vec<T>;
}

/// Runs paths one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct SerialMapper;

impl PathMapper for SerialMapper {
    fn map_paths<T: Send, F: Fn(usize) -> T + Sync>(&self, n: usize, f: F) -> Vec<T> {
        (0..n).map(f).collect()
    }
}

/// Summary statistics of the Girsanov weights of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDiagnostics {
    /// Sample mean of the weights; the weights are a martingale, so this
    /// should sit within Monte Carlo error of one.
    pub mean_weight: f64,
    pub weight_se: f64,
    /// Paths whose log-weight overflowed the exponential and were flagged.
    pub capped: usize,
}

/// A Monte Carlo ensemble: terminal states plus per-path flags.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    cfg: PathConfig,
    dim: usize,
    init: InitialLaw,
    kind: EnsembleKind,
    drift: Option<DriftSpec>,
    final_states: Vec<f64>,
    flagged: Vec<bool>,
    flagged_count: usize,
    log_weights: Option<Vec<f64>>,
    weight_stats: Option<WeightDiagnostics>,
}

impl PathEnsemble {
    pub fn config(&self) -> &PathConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> EnsembleKind {
        self.kind
    }

    pub fn initial_law(&self) -> &InitialLaw {
        &self.init
    }

    pub fn drift(&self) -> Option<&DriftSpec> {
        self.drift.as_ref()
    }

    pub fn final_state(&self, path: usize) -> &[f64] {
        &self.final_states[path * self.dim..(path + 1) * self.dim]
    }

    pub fn is_flagged(&self, path: usize) -> bool {
        self.flagged[path]
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged_count
    }

    /// Paths that enter estimators.
    pub fn n_used(&self) -> usize {
        self.cfg.n - self.flagged_count
    }

    pub fn log_weights(&self) -> Option<&[f64]> {
        self.log_weights.as_deref()
    }

    pub fn is_weighted(&self) -> bool {
        self.log_weights.is_some()
    }

    pub fn weight_diagnostics(&self) -> Option<&WeightDiagnostics> {
        self.weight_stats.as_ref()
    }
}

/// A scalar estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_used: usize,
}

fn sup_abs(x: &[f64]) -> f64 {
    let mut m = 0.0;
    for &v in x {
        let a = math::abs(v);
        if a > m {
            m = a;
        }
    }
    m
}

/// Mean and standard error of the mean, in the order given.
fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mut sum = 0.0;
    for &v in values {
        sum += v;
    }
    let mean = sum / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let mut ss = 0.0;
    for &v in values {
        let d = v - mean;
        ss += d * d;
    }
    let var = ss / (n as f64 - 1.0);
    (mean, math::sqrt(var / n as f64))
}

/// Replays path `path`: the visitor sees `(k, t_k, X_{t_k}, dB_k)` before
/// each update, which is exactly the Ito convention for pathwise sums.
/// Returns the terminal state and whether the path was flagged.
fn replay_path<V: FnMut(usize, f64, &[f64], &[f64])>(
    cfg: &PathConfig,
    dim: usize,
    init: &InitialLaw,
    drift: Option<&DriftSpec>,
    path: usize,
    visit: &mut V,
) -> ([f64; MAX_DIM], bool) {
    let mut stream = PathStream::new(cfg.seed, path as u64);
    let mut x = [0.0; MAX_DIM];
    init.sample_into(&mut stream, &mut x[..dim]);
    let scale = math::sqrt(cfg.dt);
    let mut db = [0.0; MAX_DIM];
    let mut bv = [0.0; MAX_DIM];
    for k in 0..cfg.steps() {
        let t = cfg.time_at(k);
        for a in 0..dim {
            db[a] = scale * stream.next_normal();
        }
        visit(k, t, &x[..dim], &db[..dim]);
        if let Some(b) = drift {
            if b.eval_into(t, &x[..dim], &mut bv[..dim]).is_err() {
                return (x, true);
            }
            for a in 0..dim {
                x[a] += bv[a] * cfg.dt;
            }
        }
        for a in 0..dim {
            x[a] += db[a];
        }
        let sup = sup_abs(&x[..dim]);
        if !sup.is_finite() || sup > DIVERGENCE_BOUND {
            return (x, true);
        }
    }
    (x, false)
}

fn generate<M: PathMapper>(
    cfg: &PathConfig,
    init: &InitialLaw,
    drift: Option<DriftSpec>,
    kind: EnsembleKind,
    mapper: &M,
) -> Result<PathEnsemble> {
    let dim = init.dim();
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::InvalidConfig(String::from("state dimension outside 1..=3")));
    }
    if let Some(b) = &drift {
        if b.dim() != dim {
            return Err(Error::ShapeMismatch(String::from(
                "drift dimension does not match the initial law",
            )));
        }
    }
    let rows = mapper.map_paths(cfg.n, |i| {
        replay_path(cfg, dim, init, drift.as_ref(), i, &mut |_, _, _, _| {})
    });
    let mut final_states = vec![0.0; cfg.n * dim];
    let mut flagged = vec![false; cfg.n];
    let mut flagged_count = 0;
    for (i, (x, bad)) in rows.iter().enumerate() {
        final_states[i * dim..(i + 1) * dim].copy_from_slice(&x[..dim]);
        flagged[i] = *bad;
        if *bad {
            flagged_count += 1;
        }
    }
    Ok(PathEnsemble {
        cfg: cfg.clone(),
        dim,
        init: init.clone(),
        kind,
        drift,
        final_states,
        flagged,
        flagged_count,
        log_weights: None,
        weight_stats: None,
    })
}

/// Driftless paths `X = X_0 + B`.
pub fn simulate_brownian<M: PathMapper>(
    cfg: &PathConfig,
    init: &InitialLaw,
    mapper: &M,
) -> Result<PathEnsemble> {
    generate(cfg, init, None, EnsembleKind::Brownian, mapper)
}

/// Euler-Maruyama paths `X_{k+1} = X_k + b(t_k, X_k) dt + dB_k`.
pub fn euler_maruyama<M: PathMapper>(
    b: &DriftSpec,
    cfg: &PathConfig,
    init: &InitialLaw,
    mapper: &M,
) -> Result<PathEnsemble> {
    generate(cfg, init, Some(b.clone()), EnsembleKind::Drifted, mapper)
}

/// Attaches the Girsanov weights for drift `b` to a Brownian ensemble.
///
/// The log-weight of path `i` is the Ito sum
/// `sum_k b(t_k, X_k) . dB_k - (dt/2) sum_k |b(t_k, X_k)|^2` along the
/// replayed Brownian path, so the weighted ensemble estimates expectations
/// under the drifted law without simulating it. Paths whose log-weight
/// overflows are flagged and counted in the diagnostics.
pub fn girsanov_weights<M: PathMapper>(
    paths: &PathEnsemble,
    b: &DriftSpec,
    mapper: &M,
) -> Result<PathEnsemble> {
    if paths.kind != EnsembleKind::Brownian {
        return Err(Error::InvalidConfig(String::from(
            "reweighting applies to Brownian ensembles only",
        )));
    }
    if paths.is_weighted() {
        return Err(Error::InvalidConfig(String::from("ensemble already carries weights")));
    }
    if b.dim() != paths.dim {
        return Err(Error::ShapeMismatch(String::from("drift dimension does not match ensemble")));
    }
    let dim = paths.dim;
    let dt = paths.cfg.dt;
    let rows = mapper.map_paths(paths.cfg.n, |i| {
        let mut logw = 0.0;
        let mut bad = false;
        let mut bv = [0.0; MAX_DIM];
        replay_path(&paths.cfg, dim, &paths.init, None, i, &mut |_, t, x, db| {
            if b.eval_into(t, x, &mut bv[..dim]).is_err() {
                bad = true;
                return;
            }
            let mut dot = 0.0;
            let mut q = 0.0;
            for a in 0..dim {
                dot += bv[a] * db[a];
                q += bv[a] * bv[a];
            }
            logw += dot - 0.5 * q * dt;
        });
        (logw, bad)
    });
    let mut out = paths.clone();
    let mut log_weights = vec![0.0; paths.cfg.n];
    let mut capped = 0;
    for (i, (logw, bad)) in rows.iter().enumerate() {
        log_weights[i] = *logw;
        let overflow = !logw.is_finite() || *logw > LOG_EXP_CAP;
        if (*bad || overflow) && !out.flagged[i] {
            out.flagged[i] = true;
            out.flagged_count += 1;
        }
        if overflow {
            capped += 1;
        }
    }
    let weights: Vec<f64> = (0..paths.cfg.n)
        .filter(|&i| !out.flagged[i])
        .map(|i| math::exp(log_weights[i]))
        .collect();
    let (mean_weight, weight_se) = mean_and_se(&weights);
    out.log_weights = Some(log_weights);
    out.weight_stats = Some(WeightDiagnostics { mean_weight, weight_se, capped });
    Ok(out)
}

/// Mean of `h(X_T)` over the unflagged paths. On a weighted ensemble this
/// is the unnormalized Girsanov estimator `mean(w_i h(X_i))`, an unbiased
/// estimate of the drifted-law expectation.
pub fn terminal_mean(paths: &PathEnsemble, h: impl Fn(&[f64]) -> f64) -> McEstimate {
    let mut values = Vec::with_capacity(paths.n_used());
    for i in 0..paths.cfg.n {
        if paths.flagged[i] {
            continue;
        }
        let mut v = h(paths.final_state(i));
        if let Some(logw) = &paths.log_weights {
            v *= math::exp(logw[i]);
        }
        values.push(v);
    }
    let (value, std_error) = mean_and_se(&values);
    McEstimate { value, std_error, n_used: values.len() }
}

/// Scalar profiles `f(t, x)` for the exponential-moment machinery.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarSpec {
    /// Constant in time and space.
    Constant(f64),
    /// `amplitude * exp(-|x - center|^2 / (2 width^2))`.
    Bump { amplitude: f64, center: Vec<f64>, width: f64 },
    /// Interpolated scalar-rank samples, zero outside the grid box.
    Tabulated(GridFunction),
}

impl ScalarSpec {
    /// Spatial dimension pinned by the profile, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ScalarSpec::Constant(_) => None,
            ScalarSpec::Bump { center, .. } => Some(center.len()),
            ScalarSpec::Tabulated(f) => Some(f.grid().dim()),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if let ScalarSpec::Tabulated(f) = self {
            if f.rank() != Rank::Scalar {
                return Err(Error::ShapeMismatch(String::from("tabulated profile must be scalar-rank")));
            }
        }
        match self.dim() {
            Some(d) if d != dim => {
                Err(Error::ShapeMismatch(String::from("profile dimension does not match ensemble")))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            ScalarSpec::Constant(c) => *c,
            ScalarSpec::Bump { amplitude, center, width } => {
                let mut q = 0.0;
                for (a, c) in center.iter().enumerate() {
                    let d = x[a] - c;
                    q += d * d;
                }
                amplitude * math::exp(-q / (2.0 * width * width))
            }
            ScalarSpec::Tabulated(f) => {
                let mut out = [0.0];
                f.interp(t, x, &mut out);
                out[0]
            }
        }
    }

    /// Greatest lower bound used by the nonnegativity guard.
    fn lower_bound(&self) -> f64 {
        match self {
            ScalarSpec::Constant(c) => *c,
            ScalarSpec::Bump { amplitude, .. } => if *amplitude < 0.0 { *amplitude } else { 0.0 },
            ScalarSpec::Tabulated(f) => {
                let mut m = 0.0;
                for j in 0..=f.grid().time_cells() {
                    for s in 0..f.grid().spatial_nodes() {
                        let v = f.value(j, s, 0);
                        if v < m {
                            m = v;
                        }
                    }
                }
                m
            }
        }
    }

    /// Samples the profile on every node of `grid` as a scalar field.
    pub fn sample(&self, grid: &GridSpec) -> GridFunction {
        GridFunction::sample_scalar(grid, "profile", |t, x| self.eval(t, x))
    }
}

/// Khasminskii-style exponential moment of a nonnegative profile.
#[derive(Debug, Clone, PartialEq)]
pub struct KhasminskiiReport {
    /// Sample mean of the pathwise integral `int f(s, X_s) ds`.
    pub m_hat: f64,
    pub m_se: f64,
    /// Sample mean of `exp(int f(s, X_s) ds)`.
    pub e_hat: f64,
    pub e_se: f64,
    /// `1 / (1 - m_hat)`, infinite once the mean integral reaches one.
    pub bound: f64,
    /// Whether `e_hat <= bound` within four standard errors; `None` when
    /// the mean integral is not resolvably below one, where the one-step
    /// bound does not apply and the window must be partitioned.
    pub holds: Option<bool>,
    /// Mixed Lorentz norm of the profile at the supplied exponents.
    pub f_norm: f64,
    pub n_used: usize,
}

/// Estimates `E exp(int_0^T f(s, X_s) ds)` over a Brownian ensemble and
/// checks it against `1 / (1 - E int f)`.
///
/// The profile must be nonnegative and the exponents must sit on the
/// once-integrated scale `2/q + d/p = 2`, where the profile plays the role
/// of a squared critical drift. The reported norm is taken over the
/// ensemble's time window on `grid`.
pub fn khasminskii_estimate<M: PathMapper>(
    f: &ScalarSpec,
    grid: &GridSpec,
    exps: &LorentzExponents,
    paths: &PathEnsemble,
    mapper: &M,
) -> Result<KhasminskiiReport> {
    if paths.kind != EnsembleKind::Brownian || paths.is_weighted() {
        return Err(Error::InvalidConfig(String::from(
            "the exponential-moment bound is stated for plain Brownian ensembles",
        )));
    }
    let dim = paths.dim;
    f.validate(dim)?;
    if f.lower_bound() < 0.0 {
        return Err(Error::InvalidConfig(String::from("profile must be nonnegative")));
    }
    if grid.dim() != dim {
        return Err(Error::ShapeMismatch(String::from("grid dimension does not match ensemble")));
    }
    if math::abs(exps.criticality(dim) - 2.0) > 1e-12 {
        return Err(Error::InvalidExponents(format!(
            "the exponential-moment scale needs 2/q + d/p = 2, got {}",
            exps.criticality(dim)
        )));
    }
    let f_norm = mixed_lorentz_norm(&f.sample(grid), exps, (paths.cfg.t0, paths.cfg.t1))?.value;
    let dt = paths.cfg.dt;
    let rows = mapper.map_paths(paths.cfg.n, |i| {
        let mut integral = 0.0;
        let (_, bad) = replay_path(&paths.cfg, dim, &paths.init, None, i, &mut |_, t, x, _| {
            integral += f.eval(t, x) * dt;
        });
        (integral, bad || paths.flagged[i])
    });
    let mut integrals = Vec::with_capacity(paths.cfg.n);
    let mut exps_of = Vec::with_capacity(paths.cfg.n);
    for (integral, bad) in &rows {
        if *bad || !integral.is_finite() || *integral > LOG_EXP_CAP {
            continue;
        }
        integrals.push(*integral);
        exps_of.push(math::exp(*integral));
    }
    let (m_hat, m_se) = mean_and_se(&integrals);
    let (e_hat, e_se) = mean_and_se(&exps_of);
    let bound = if m_hat < 1.0 { 1.0 / (1.0 - m_hat) } else { f64::INFINITY };
    let holds = if m_hat + 4.0 * m_se < 1.0 {
        Some(e_hat <= bound + 4.0 * e_se)
    } else {
        None
    };
    Ok(KhasminskiiReport {
        m_hat,
        m_se,
        e_hat,
        e_se,
        bound,
        holds,
        f_norm,
        n_used: integrals.len(),
    })
}

/// Estimate of `E exp(l1 int g . dB + l2 int |g|^2 ds)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpMomentReport {
    pub estimate: f64,
    pub std_error: f64,
    /// Share of the sample sum carried by the largest percentile.
    pub top_share: f64,
    /// True when that share exceeds one half: the estimator is dominated
    /// by rare paths and the printed error bar is not trustworthy.
    pub heavy_tail: bool,
    pub n_used: usize,
}

/// Exponential moments of stochastic and quadratic integrals of `g`.
///
/// On a Brownian ensemble the integrals are taken along the paths as they
/// stand. On a drifted ensemble the expectation is under the drifted law:
/// the op replays the Brownian skeleton and multiplies in the Girsanov
/// factor for the ensemble's own drift, with `int g . dB` corrected to the
/// driving noise of the drifted paths. Overflowing paths are flagged.
pub fn exp_functional_moment<M: PathMapper>(
    lambda1: f64,
    lambda2: f64,
    g: &DriftSpec,
    paths: &PathEnsemble,
    mapper: &M,
) -> Result<ExpMomentReport> {
    if paths.kind == EnsembleKind::Conjugated {
        return Err(Error::InvalidConfig(String::from(
            "exponential moments are taken over Brownian or drifted ensembles",
        )));
    }
    if paths.is_weighted() {
        return Err(Error::InvalidConfig(String::from(
            "pass the unweighted ensemble; the drifted route weights internally",
        )));
    }
    let dim = paths.dim;
    if g.dim() != dim {
        return Err(Error::ShapeMismatch(String::from("integrand dimension does not match ensemble")));
    }
    let dt = paths.cfg.dt;
    let drift = paths.drift.clone();
    let rows = mapper.map_paths(paths.cfg.n, |i| {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let mut correction = 0.0;
        let mut log_alpha = 0.0;
        let mut bad = false;
        let mut gv = [0.0; MAX_DIM];
        let mut bv = [0.0; MAX_DIM];
        replay_path(&paths.cfg, dim, &paths.init, None, i, &mut |_, t, x, db| {
            if g.eval_into(t, x, &mut gv[..dim]).is_err() {
                bad = true;
                return;
            }
            let mut gdb = 0.0;
            let mut gg = 0.0;
            for a in 0..dim {
                gdb += gv[a] * db[a];
                gg += gv[a] * gv[a];
            }
            s1 += gdb;
            s2 += gg * dt;
            if let Some(b) = &drift {
                if b.eval_into(t, x, &mut bv[..dim]).is_err() {
                    bad = true;
                    return;
                }
                let mut bdb = 0.0;
                let mut bb = 0.0;
                let mut gb = 0.0;
                for a in 0..dim {
                    bdb += bv[a] * db[a];
                    bb += bv[a] * bv[a];
                    gb += gv[a] * bv[a];
                }
                log_alpha += bdb - 0.5 * bb * dt;
                correction += gb * dt;
            }
        });
        let expo = log_alpha + lambda1 * (s1 - correction) + lambda2 * s2;
        (expo, bad || paths.flagged[i])
    });
    let mut values = Vec::with_capacity(paths.cfg.n);
    for (expo, bad) in &rows {
        if *bad || !expo.is_finite() || *expo > LOG_EXP_CAP {
            continue;
        }
        values.push(math::exp(*expo));
    }
    let (estimate, std_error) = mean_and_se(&values);
    let n_used = values.len();
    let mut sorted = values;
    sorted.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    let mut total = 0.0;
    for &v in &sorted {
        total += v;
    }
    let top = n_used.div_ceil(100);
    let mut top_sum = 0.0;
    for &v in sorted.iter().take(top) {
        top_sum += v;
    }
    let top_share = if total > 0.0 { top_sum / total } else { 0.0 };
    Ok(ExpMomentReport {
        estimate,
        std_error,
        top_share,
        heavy_tail: top_share > 0.5,
        n_used,
    })
}

fn check_window(map: &FlowMap, cfg: &PathConfig) -> Result<()> {
    let (a, b) = map.interval();
    if cfg.t0 < a - 1e-9 || cfg.t1 > b + 1e-9 {
        return Err(Error::IntervalOutOfRange { start: cfg.t0, end: cfg.t1 });
    }
    Ok(())
}

/// One conjugated path `Y_{k+1} = Y_k + sigma~(t_k, Y_k) dB_k`; the
/// visitor sees every node `(k, t_k, Y_{t_k})` including the endpoints.
/// Draws are consumed exactly as in [`replay_path`], so a conjugated run
/// and a Brownian run with the same seed share their increments.
fn replay_conjugated<V: FnMut(usize, f64, &[f64])>(
    map: &FlowMap,
    cfg: &PathConfig,
    y0: &[f64],
    path: usize,
    visit: &mut V,
) -> ([f64; MAX_DIM], bool) {
    let dim = map.phi().grid().dim();
    let mut stream = PathStream::new(cfg.seed, path as u64);
    let mut y = [0.0; MAX_DIM];
    y[..dim].copy_from_slice(y0);
    let scale = math::sqrt(cfg.dt);
    let mut db = [0.0; MAX_DIM];
    visit(0, cfg.t0, &y[..dim]);
    for k in 0..cfg.steps() {
        let t = cfg.time_at(k);
        for a in 0..dim {
            db[a] = scale * stream.next_normal();
        }
        let sigma = match conjugated_sigma(map, t, &y[..dim]) {
            Ok(s) => s,
            Err(_) => return (y, true),
        };
        for a in 0..dim {
            let mut dy = 0.0;
            for c in 0..dim {
                dy += sigma[a * dim + c] * db[c];
            }
            y[a] += dy;
        }
        let sup = sup_abs(&y[..dim]);
        if !sup.is_finite() || sup > DIVERGENCE_BOUND {
            return (y, true);
        }
        visit(k + 1, cfg.time_at(k + 1), &y[..dim]);
    }
    (y, false)
}

/// Paths of the conjugated SDE `dY = sigma~(t, Y) dB` from `y0`.
///
/// Each step inverts the transform at the current state; a failed
/// inversion (state outside the trusted reach, or Newton stall) flags the
/// path. The time window must lie inside the transform's interval.
pub fn simulate_conjugated<M: PathMapper>(
    map: &FlowMap,
    cfg: &PathConfig,
    y0: &[f64],
    mapper: &M,
) -> Result<PathEnsemble> {
    let dim = map.phi().grid().dim();
    if y0.len() != dim {
        return Err(Error::ShapeMismatch(String::from("start dimension does not match transform")));
    }
    check_window(map, cfg)?;
    let rows = mapper.map_paths(cfg.n, |i| replay_conjugated(map, cfg, y0, i, &mut |_, _, _| {}));
    let mut final_states = vec![0.0; cfg.n * dim];
    let mut flagged = vec![false; cfg.n];
    let mut flagged_count = 0;
    for (i, (y, bad)) in rows.iter().enumerate() {
        final_states[i * dim..(i + 1) * dim].copy_from_slice(&y[..dim]);
        flagged[i] = *bad;
        if *bad {
            flagged_count += 1;
        }
    }
    Ok(PathEnsemble {
        cfg: cfg.clone(),
        dim,
        init: InitialLaw::point(y0),
        kind: EnsembleKind::Conjugated,
        drift: None,
        final_states,
        flagged,
        flagged_count,
        log_weights: None,
        weight_stats: None,
    })
}

/// How far the conjugated paths sit from the transformed original paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugationReport {
    /// `sup_k mean_i |Phi(t_k, X_k) - Y_k|` over the window.
    pub sup_mean_deviation: f64,
    /// The same mean at the final time.
    pub final_mean_deviation: f64,
    pub n_used: usize,
}

/// Couples `X` (Euler-Maruyama under `b`) and `Y` (conjugated SDE) on the
/// same increments from `Y_0 = Phi(t0, x0)` and measures
/// `mean |Phi(t_k, X_k) - Y_k|` at every node.
///
/// When the transform's solution field actually solves the companion PDE
/// for `b`, the two sides describe the same process and the deviation is
/// pure scheme error, shrinking like the square root of the step.
pub fn conjugation_deviation<M: PathMapper>(
    map: &FlowMap,
    b: &DriftSpec,
    cfg: &PathConfig,
    x0: &[f64],
    mapper: &M,
) -> Result<ConjugationReport> {
    let dim = map.phi().grid().dim();
    if x0.len() != dim || b.dim() != dim {
        return Err(Error::ShapeMismatch(String::from("dimensions do not match transform")));
    }
    check_window(map, cfg)?;
    let steps = cfg.steps();
    let mut y0 = vec![0.0; dim];
    map.phi().interp(cfg.t0, x0, &mut y0);
    let rows = mapper.map_paths(cfg.n, |i| {
        let mut stream = PathStream::new(cfg.seed, i as u64);
        let mut x = [0.0; MAX_DIM];
        let mut y = [0.0; MAX_DIM];
        x[..dim].copy_from_slice(x0);
        y[..dim].copy_from_slice(&y0);
        let scale = math::sqrt(cfg.dt);
        let mut db = [0.0; MAX_DIM];
        let mut bv = [0.0; MAX_DIM];
        let mut pv = [0.0; MAX_DIM];
        let mut devs = vec![0.0; steps + 1];
        let mut bad = false;
        for k in 0..steps {
            let t = cfg.time_at(k);
            for a in 0..dim {
                db[a] = scale * stream.next_normal();
            }
            let sigma = match conjugated_sigma(map, t, &y[..dim]) {
                Ok(s) => s,
                Err(_) => {
                    bad = true;
                    break;
                }
            };
            if b.eval_into(t, &x[..dim], &mut bv[..dim]).is_err() {
                bad = true;
                break;
            }
            for a in 0..dim {
                x[a] += bv[a] * cfg.dt + db[a];
                let mut dy = 0.0;
                for c in 0..dim {
                    dy += sigma[a * dim + c] * db[c];
                }
                y[a] += dy;
            }
            let sup = if sup_abs(&x[..dim]) > sup_abs(&y[..dim]) {
                sup_abs(&x[..dim])
            } else {
                sup_abs(&y[..dim])
            };
            if !sup.is_finite() || sup > DIVERGENCE_BOUND {
                bad = true;
                break;
            }
            map.phi().interp(cfg.time_at(k + 1), &x[..dim], &mut pv[..dim]);
            let mut q = 0.0;
            for a in 0..dim {
                let d = pv[a] - y[a];
                q += d * d;
            }
            devs[k + 1] = math::sqrt(q);
        }
        (devs, bad)
    });
    let mut sums = vec![0.0; steps + 1];
    let mut n_used = 0;
    for (devs, bad) in &rows {
        if *bad {
            continue;
        }
        n_used += 1;
        for (k, d) in devs.iter().enumerate() {
            sums[k] += d;
        }
    }
    if n_used == 0 {
        return Err(Error::EmptyInput(String::from("every path was flagged")));
    }
    let mut sup = 0.0;
    for s in &mut sums {
        *s /= n_used as f64;
        if *s > sup {
            sup = *s;
        }
    }
    Ok(ConjugationReport {
        sup_mean_deviation: sup,
        final_mean_deviation: sums[steps],
        n_used,
    })
}

/// Two conjugated paths coupled through their starting points.
#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessReport {
    /// `sup_k mean_i |Y^1_k - Y^2_k|^{r/2}`.
    pub sup_moment: f64,
    /// `|y1 - y2|^{r/2}`, the starting value of the same moment.
    pub separation_moment: f64,
    /// Ratio of the two; identically zero starts report zero.
    pub ratio: f64,
    /// True when the starts coincide, in which case the coupled paths
    /// agree identically, not merely in distribution.
    pub coincident: bool,
    pub n_used: usize,
}

/// Couples two conjugated solutions on the same Brownian increments and
/// tracks the moment `E |Y^1_t - Y^2_t|^{r/2}` relative to its starting
/// value. Bounded ratios over shrinking separations are the quantitative
/// face of pathwise uniqueness for the conjugated dynamics.
pub fn pathwise_uniqueness_stats<M: PathMapper>(
    map: &FlowMap,
    y1: &[f64],
    y2: &[f64],
    r: f64,
    cfg: &PathConfig,
    mapper: &M,
) -> Result<UniquenessReport> {
    let dim = map.phi().grid().dim();
    if y1.len() != dim || y2.len() != dim {
        return Err(Error::ShapeMismatch(String::from("start dimension does not match transform")));
    }
    if !(r > 0.0) {
        return Err(Error::InvalidConfig(String::from("moment order must be positive")));
    }
    check_window(map, cfg)?;
    let steps = cfg.steps();
    let half_r = 0.5 * r;
    let rows = mapper.map_paths(cfg.n, |i| {
        let mut stream = PathStream::new(cfg.seed, i as u64);
        let mut a = [0.0; MAX_DIM];
        let mut c = [0.0; MAX_DIM];
        a[..dim].copy_from_slice(y1);
        c[..dim].copy_from_slice(y2);
        let scale = math::sqrt(cfg.dt);
        let mut db = [0.0; MAX_DIM];
        let mut moments = vec![0.0; steps + 1];
        let mut bad = false;
        let gap = |u: &[f64], v: &[f64]| {
            let mut q = 0.0;
            for i in 0..dim {
                let d = u[i] - v[i];
                q += d * d;
            }
            math::sqrt(q)
        };
        moments[0] = math::powf(gap(&a[..dim], &c[..dim]), half_r);
        for k in 0..steps {
            let t = cfg.time_at(k);
            for e in 0..dim {
                db[e] = scale * stream.next_normal();
            }
            let s1 = match conjugated_sigma(map, t, &a[..dim]) {
                Ok(s) => s,
                Err(_) => {
                    bad = true;
                    break;
                }
            };
            let s2 = match conjugated_sigma(map, t, &c[..dim]) {
                Ok(s) => s,
                Err(_) => {
                    bad = true;
                    break;
                }
            };
            for e in 0..dim {
                let mut da = 0.0;
                let mut dc = 0.0;
                for f in 0..dim {
                    da += s1[e * dim + f] * db[f];
                    dc += s2[e * dim + f] * db[f];
                }
                a[e] += da;
                c[e] += dc;
            }
            let sup = if sup_abs(&a[..dim]) > sup_abs(&c[..dim]) {
                sup_abs(&a[..dim])
            } else {
                sup_abs(&c[..dim])
            };
            if !sup.is_finite() || sup > DIVERGENCE_BOUND {
                bad = true;
                break;
            }
            moments[k + 1] = math::powf(gap(&a[..dim], &c[..dim]), half_r);
        }
        (moments, bad)
    });
    let mut sums = vec![0.0; steps + 1];
    let mut n_used = 0;
    for (moments, bad) in &rows {
        if *bad {
            continue;
        }
        n_used += 1;
        for (k, m) in moments.iter().enumerate() {
            sums[k] += m;
        }
    }
    if n_used == 0 {
        return Err(Error::EmptyInput(String::from("every path was flagged")));
    }
    let mut sup = 0.0;
    for s in &mut sums {
        *s /= n_used as f64;
        if *s > sup {
            sup = *s;
        }
    }
    let mut q = 0.0;
    for i in 0..dim {
        let d = y1[i] - y2[i];
        q += d * d;
    }
    let separation_moment = math::powf(math::sqrt(q), half_r);
    let coincident = separation_moment == 0.0;
    let ratio = if coincident {
        if sup == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        sup / separation_moment
    };
    Ok(UniquenessReport { sup_moment: sup, separation_moment, ratio, coincident, n_used })
}

/// One mollification level of the supercritical probe.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceLevel {
    pub epsilon: f64,
    /// Estimate of `E int_0^T |b_eps(X_s)|^2 ds`.
    pub functional: f64,
    pub functional_se: f64,
    /// Fraction of paths ending inside the mollification ball.
    pub trapped_fraction: f64,
}

/// Probe of the inverse-radial family across mollification levels.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub levels: Vec<DivergenceLevel>,
    /// Ratios of successive functionals, one per adjacent level pair.
    pub growth_factors: Vec<f64>,
    /// True when successive functionals increase with confidence intervals
    /// (four standard errors) disjoint. A trend statement, nothing more:
    /// the unmollified limit itself is outside every scheme's reach.
    pub strictly_increasing: bool,
}

/// Runs Euler-Maruyama from the origin under `-+ beta x / (|x|^2 + eps^2)`
/// and reports `E int |b_eps(X_s)|^2 ds` per mollification level.
///
/// For the inward sign this functional must blow up as the mollification
/// is removed; the paths are dragged onto the singularity and the drift
/// cannot stay square-integrable along them. The outward sign pushes paths
/// off the singularity and the same functional saturates. Levels must be
/// strictly decreasing and positive.
pub fn counterexample_probe<M: PathMapper>(
    beta: f64,
    outward: bool,
    eps_levels: &[f64],
    dim: usize,
    cfg: &PathConfig,
    mapper: &M,
) -> Result<DivergenceReport> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidConfig(String::from("beta must be nonnegative")));
    }
    if eps_levels.is_empty() {
        return Err(Error::EmptyInput(String::from("no mollification levels")));
    }
    for w in eps_levels.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::InvalidConfig(String::from("levels must be strictly decreasing")));
        }
    }
    if !(eps_levels[eps_levels.len() - 1] > 0.0) {
        return Err(Error::InvalidConfig(String::from("levels must be positive")));
    }
    let init = InitialLaw::origin(dim);
    let mut levels = Vec::with_capacity(eps_levels.len());
    for &eps in eps_levels {
        let b = DriftSpec::inverse_radial(dim, beta, outward, eps)?;
        let dt = cfg.dt;
        let rows = mapper.map_paths(cfg.n, |i| {
            let mut integral = 0.0;
            let mut bv = [0.0; MAX_DIM];
            let (x, bad) = replay_path(cfg, dim, &init, Some(&b), i, &mut |_, t, x, _| {
                if b.eval_into(t, x, &mut bv[..dim]).is_ok() {
                    integral += math::norm2_sq(&bv[..dim]) * dt;
                }
            });
            let trapped = math::norm2(&x[..dim]) < eps;
            (integral, trapped, bad)
        });
        let mut integrals = Vec::with_capacity(cfg.n);
        let mut trapped_count = 0usize;
        for (integral, trapped, bad) in &rows {
            if *bad || !integral.is_finite() {
                continue;
            }
            integrals.push(*integral);
            if *trapped {
                trapped_count += 1;
            }
        }
        if integrals.is_empty() {
            return Err(Error::EmptyInput(String::from("every probe path was flagged")));
        }
        let (functional, functional_se) = mean_and_se(&integrals);
        levels.push(DivergenceLevel {
            epsilon: eps,
            functional,
            functional_se,
            trapped_fraction: trapped_count as f64 / integrals.len() as f64,
        });
    }
    let mut growth_factors = Vec::with_capacity(levels.len().saturating_sub(1));
    let mut strictly_increasing = levels.len() > 1;
    for w in levels.windows(2) {
        growth_factors.push(w[1].functional / w[0].functional);
        let lo = w[1].functional - 4.0 * w[1].functional_se;
        let hi = w[0].functional + 4.0 * w[0].functional_se;
        if lo <= hi {
            strictly_increasing = false;
        }
    }
    Ok(DivergenceReport { levels, growth_factors, strictly_increasing })
}

//! Experiment configuration: one self-contained, human-editable TOML file
//! per run.
//!
//! A config names the experiment, the grid, the exponents, the drift, the
//! Monte Carlo parameters (the seed is mandatory), and the thresholds the
//! recipe checks against. [`ExperimentConfig::resolved`] fills every
//! omitted default and validates the cross-field invariants, so the copy
//! embedded in a run's manifest states every knob explicitly; a rerun of
//! that copy needs no context beyond the file itself.
//!
//! Exponent admissibility is an invariant of the experiment, not a
//! convention: recipes that solve the companion PDE demand the critical
//! relation `2/q + d/p = 1`, and the exponential-moment recipe demands the
//! once-integrated scale `2/q + d/p = 2`.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use sde_lab_core::grid::{DriftSpec, GridSpec};
use sde_lab_core::lorentz::{LorentzExponents, OuterIndex};
use sde_lab_core::sde::ScalarSpec;

/// The nine experiment recipes the runner knows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Norms,
    Pde,
    Zvonkin,
    WeakExistence,
    Khasminskii,
    Conjugation,
    Stability,
    Regularity,
    Counterexample,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::Norms,
        Experiment::Pde,
        Experiment::Zvonkin,
        Experiment::WeakExistence,
        Experiment::Khasminskii,
        Experiment::Conjugation,
        Experiment::Stability,
        Experiment::Regularity,
        Experiment::Counterexample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Norms => "norms",
            Experiment::Pde => "pde",
            Experiment::Zvonkin => "zvonkin",
            Experiment::WeakExistence => "weak-existence",
            Experiment::Khasminskii => "khasminskii",
            Experiment::Conjugation => "conjugation",
            Experiment::Stability => "stability",
            Experiment::Regularity => "regularity",
            Experiment::Counterexample => "counterexample",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Experiment::Norms => "Lorentz norm oracles: indicator closed form and randomized step profiles",
            Experiment::Pde => "backward Kolmogorov solve with fixed-point trace and residual diagnostics",
            Experiment::Zvonkin => "transform construction with the diffeomorphism certificate",
            Experiment::WeakExistence => "Girsanov-weighted estimator against direct Euler-Maruyama",
            Experiment::Khasminskii => "exponential moment of a time integral against the 1/(1-M) bound",
            Experiment::Conjugation => "deviation between the transformed process and its conjugated SDE per dt",
            Experiment::Stability => "flow gap moments across mollification levels of the drift",
            Experiment::Regularity => "weak-derivative moments of the flow via coupled difference quotients",
            Experiment::Counterexample => "inverse-radial probe separating inward and outward drift regimes",
        }
    }
}

/// Report file format; the manifest itself is always JSON.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
        }
    }
}

/// What a run keeps on disk beyond the report tables: `full` adds bulk
/// artifacts (solution fields, terminal-slice ensembles), `summary` keeps
/// only the tables. Paths regenerate from `(seed, path index)`, so nothing
/// is lost by the summary choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Retention {
    #[default]
    Summary,
    Full,
}

/// Space-time box: `[-extent, extent]^dim x [t0, t1]` with steps `h`, `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub dim: usize,
    pub extent: f64,
    pub h: f64,
    #[serde(default)]
    pub t0: f64,
    pub t1: f64,
    pub tau: f64,
}

impl GridParams {
    pub fn to_grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.dim, self.extent, self.h, self.t0, self.t1, self.tau)
            .map_err(|e| anyhow!("grid: {e}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OuterIdx {
    #[default]
    One,
    Infinity,
}

impl From<OuterIdx> for OuterIndex {
    fn from(r: OuterIdx) -> OuterIndex {
        match r {
            OuterIdx::One => OuterIndex::One,
            OuterIdx::Infinity => OuterIndex::Infinity,
        }
    }
}

/// Mixed-norm exponents: inner spatial `p`, outer time `q` with
/// refinement index `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentParams {
    pub p: f64,
    pub q: f64,
    #[serde(default)]
    pub r: OuterIdx,
}

impl ExponentParams {
    pub fn to_exponents(&self) -> Result<LorentzExponents> {
        LorentzExponents::new(self.p, self.q, self.r.into()).map_err(|e| anyhow!("exponents: {e}"))
    }
}

/// Drift coefficient families, a serializable mirror of the core ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftParams {
    Zero,
    Constant { value: Vec<f64> },
    Bump { amplitude: Vec<f64>, center: Vec<f64>, width: f64 },
    InverseRadial { beta: f64, outward: bool, epsilon: f64 },
}

impl DriftParams {
    pub fn to_spec(&self, dim: usize) -> Result<DriftSpec> {
        let spec = match self {
            DriftParams::Zero => DriftSpec::constant(vec![0.0; dim]),
            DriftParams::Constant { value } => {
                if value.len() != dim {
                    bail!("constant drift has {} components on a {dim}-d grid", value.len());
                }
                DriftSpec::constant(value.clone())
            }
            DriftParams::Bump { amplitude, center, width } => {
                if amplitude.len() != dim || center.len() != dim {
                    bail!("bump drift components do not match dimension {dim}");
                }
                DriftSpec::gaussian_bump(amplitude.clone(), center.clone(), *width)
            }
            DriftParams::InverseRadial { beta, outward, epsilon } => {
                DriftSpec::inverse_radial(dim, *beta, *outward, *epsilon)
            }
        };
        spec.map_err(|e| anyhow!("drift: {e}"))
    }
}

/// Scalar profiles for the exponential-moment integrand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScalarParams {
    Constant { value: f64 },
    Bump { amplitude: f64, center: Vec<f64>, width: f64 },
}

impl ScalarParams {
    pub fn to_spec(&self, dim: usize) -> Result<ScalarSpec> {
        match self {
            ScalarParams::Constant { value } => Ok(ScalarSpec::Constant(*value)),
            ScalarParams::Bump { amplitude, center, width } => {
                if center.len() != dim {
                    bail!("scalar bump center does not match dimension {dim}");
                }
                Ok(ScalarSpec::Bump { amplitude: *amplitude, center: center.clone(), width: *width })
            }
        }
    }
}

/// Path count, step, seed, and optional start point. Every recipe takes
/// its time window from the grid, so `dt` must tile `[t0, t1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McParams {
    pub n: usize,
    pub dt: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

/// Sweep abscissas for the level experiments; recipes fill the defaults
/// listed on [`ExperimentConfig::resolved`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParams {
    /// Mollification levels, strictly decreasing (stability, counterexample).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<f64>>,
    /// Difference-quotient increments, strictly decreasing (regularity).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quotient_steps: Option<Vec<f64>>,
    /// Number of dt-halvings past the base step (conjugation).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halvings: Option<usize>,
    /// Moment order of the flow statistics (stability, regularity).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment_order: Option<f64>,
}

fn default_rel_tol() -> f64 {
    1e-9
}

fn default_sigma_gate() -> f64 {
    4.0
}

fn default_factor_low() -> f64 {
    1.2
}

fn default_factor_high() -> f64 {
    2.0
}

fn default_solver_tol() -> f64 {
    1e-9
}

fn default_max_iterations() -> usize {
    200
}

/// Gates the recipes check their outputs against. Exit status of a run
/// reflects these checks and nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Relative tolerance for closed-form comparisons.
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    /// Width of Monte Carlo agreement gates in combined standard errors.
    #[serde(default = "default_sigma_gate")]
    pub sigma_gate: f64,
    /// Accepted per-halving improvement window, lower edge.
    #[serde(default = "default_factor_low")]
    pub factor_low: f64,
    /// Accepted per-halving improvement window, upper edge.
    #[serde(default = "default_factor_high")]
    pub factor_high: f64,
    /// Fixed-point stopping distance for PDE solves.
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

impl Default for Thresholds {
    fn default() -> Thresholds {
        Thresholds {
            rel_tol: default_rel_tol(),
            sigma_gate: default_sigma_gate(),
            factor_low: default_factor_low(),
            factor_high: default_factor_high(),
            solver_tol: default_solver_tol(),
            max_iterations: default_max_iterations(),
        }
    }
}

/// One experiment, fully described. Scalar fields precede the tables so
/// the struct serializes to TOML as written here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub retention: Retention,
    pub grid: GridParams,
    pub exponents: ExponentParams,
    pub drift: DriftParams,
    /// PDE source term; only the `pde` recipe reads it. The transform
    /// recipes always solve with the drift itself as the source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<DriftParams>,
    /// Integrand of the exponential moment; required for `khasminskii`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar: Option<ScalarParams>,
    pub mc: McParams,
    #[serde(default)]
    pub sweep: SweepParams,
    #[serde(default)]
    pub thresholds: Thresholds,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        toml::from_str(text).context("parsing experiment config")
    }

    /// Canonical TOML rendering of the config; its digest is the run's
    /// inputs hash.
    pub fn canonical_toml(&self) -> Result<String> {
        toml::to_string(self).context("rendering config")
    }

    /// Fills every omitted default and validates cross-field invariants.
    ///
    /// Defaults: `output_dir = out/<experiment>`; `x0 = origin`;
    /// conjugation `halvings = 2`; stability `epsilons =
    /// [0.4, 0.2, 0.1, 0.05]`, `moment_order = 1`; regularity
    /// `quotient_steps = [0.2, 0.1, 0.05]`, `moment_order = 2`;
    /// counterexample `epsilons = [0.4, 0.2, 0.1]`; `pde` source = drift.
    pub fn resolved(mut self) -> Result<ExperimentConfig> {
        let grid = self.grid.to_grid()?;
        let exps = self.exponents.to_exponents()?;
        let dim = grid.dim();
        self.drift.to_spec(dim)?;

        if self.output_dir.is_none() {
            self.output_dir = Some(format!("out/{}", self.experiment.name()));
        }
        match &self.mc.x0 {
            None => self.mc.x0 = Some(vec![0.0; dim]),
            Some(x0) if x0.len() != dim => {
                bail!("x0 has {} components on a {dim}-d grid", x0.len())
            }
            Some(_) => {}
        }
        if self.mc.n == 0 {
            bail!("mc.n must be at least 1");
        }
        // The window the paths run on is the grid's horizon; reject a step
        // that does not tile it here rather than deep inside the recipe.
        let span = grid.t1() - grid.t0();
        if !(self.mc.dt > 0.0) || span <= 0.0 {
            bail!("mc.dt and the grid horizon must be positive");
        }
        let steps = (span / self.mc.dt).round();
        if steps < 1.0 || (steps * self.mc.dt - span).abs() > 1e-9 * span.max(1.0) {
            bail!("mc.dt = {} does not tile the horizon [{}, {}]", self.mc.dt, grid.t0(), grid.t1());
        }

        let kappa = exps.criticality(dim);
        let needs_critical = matches!(
            self.experiment,
            Experiment::Pde | Experiment::Zvonkin | Experiment::Conjugation | Experiment::Regularity
        );
        if needs_critical && (kappa - 1.0).abs() > 1e-12 {
            bail!(
                "{} solves the companion PDE and needs 2/q + d/p = 1, got {kappa}",
                self.experiment.name()
            );
        }
        if self.experiment == Experiment::Khasminskii && (kappa - 2.0).abs() > 1e-12 {
            bail!("khasminskii needs the once-integrated scale 2/q + d/p = 2, got {kappa}");
        }

        if self.source.is_some() && self.experiment != Experiment::Pde {
            bail!("[source] is read by the pde experiment only");
        }
        if self.experiment == Experiment::Pde && self.source.is_none() {
            self.source = Some(self.drift.clone());
        }
        if let Some(source) = &self.source {
            source.to_spec(dim)?;
        }

        match self.experiment {
            Experiment::Khasminskii => match &self.scalar {
                None => bail!("khasminskii needs a [scalar] integrand"),
                Some(s) => {
                    s.to_spec(dim)?;
                }
            },
            _ if self.scalar.is_some() => bail!("[scalar] is read by the khasminskii experiment only"),
            _ => {}
        }

        match self.experiment {
            Experiment::Conjugation => {
                if self.sweep.halvings.is_none() {
                    self.sweep.halvings = Some(2);
                }
            }
            Experiment::Stability => {
                if self.sweep.epsilons.is_none() {
                    self.sweep.epsilons = Some(vec![0.4, 0.2, 0.1, 0.05]);
                }
                if self.sweep.moment_order.is_none() {
                    self.sweep.moment_order = Some(1.0);
                }
            }
            Experiment::Regularity => {
                if self.sweep.quotient_steps.is_none() {
                    self.sweep.quotient_steps = Some(vec![0.2, 0.1, 0.05]);
                }
                if self.sweep.moment_order.is_none() {
                    self.sweep.moment_order = Some(2.0);
                }
            }
            Experiment::Counterexample => {
                if self.sweep.epsilons.is_none() {
                    self.sweep.epsilons = Some(vec![0.4, 0.2, 0.1]);
                }
                if !matches!(self.drift, DriftParams::InverseRadial { .. }) {
                    bail!("counterexample probes the inverse-radial family; set drift.family accordingly");
                }
            }
            _ => {}
        }

        if let Some(eps) = &self.sweep.epsilons {
            if eps.is_empty() || eps.windows(2).any(|w| !(w[1] < w[0])) || eps.iter().any(|&e| !(e > 0.0)) {
                bail!("sweep.epsilons must be strictly decreasing and positive");
            }
        }
        if let Some(hs) = &self.sweep.quotient_steps {
            if hs.is_empty() || hs.windows(2).any(|w| !(w[1] < w[0])) || hs.iter().any(|&h| !(h > 0.0)) {
                bail!("sweep.quotient_steps must be strictly decreasing and positive");
            }
        }
        if let Some(r) = self.sweep.moment_order {
            // Orders past four blow up the tails faster than desk-scale
            // path counts resolve; truncate the scale rather than report
            // noise-dominated moments.
            if !(r > 0.0) || r > 4.0 {
                bail!("sweep.moment_order must lie in (0, 4], got {r}");
            }
        }
        if !(self.thresholds.rel_tol > 0.0)
            || !(self.thresholds.sigma_gate > 0.0)
            || !(self.thresholds.solver_tol > 0.0)
            || !(self.thresholds.factor_low > 1.0)
            || !(self.thresholds.factor_high > self.thresholds.factor_low)
        {
            bail!("thresholds must be positive, with 1 < factor_low < factor_high");
        }

        Ok(self)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        self.grid.to_grid()
    }

    pub fn exponents(&self) -> Result<LorentzExponents> {
        self.exponents.to_exponents()
    }

    pub fn drift_spec(&self) -> Result<DriftSpec> {
        self.drift.to_spec(self.grid.dim)
    }

    /// Start point; present on any resolved config.
    pub fn x0(&self) -> Vec<f64> {
        self.mc.x0.clone().unwrap_or_else(|| vec![0.0; self.grid.dim])
    }
}

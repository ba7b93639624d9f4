use alloc::string::String;

/// Crate-wide error type.
///
/// Variants carry enough context to be actionable from the CLI without a
/// backtrace: which contract was violated and the offending numbers.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Lattice parameters violate a `GridSpec` invariant.
    InvalidGrid(String),
    /// Exponents outside the admissible range, or an exponent relation
    /// (duality, scaling identity) does not hold.
    InvalidExponents(String),
    /// Empty or malformed sample set handed to a rearrangement or norm.
    EmptyInput(String),
    /// A field was evaluated at the unmollified singular point.
    UnmollifiedSingularity,
    /// Mollification radius exceeds the box half-width.
    MollifierTooWide { epsilon: f64, extent: f64 },
    /// Requested time interval is not contained in the grid's horizon.
    IntervalOutOfRange { start: f64, end: f64 },
    /// A single time cell already exceeds the partition threshold.
    NotPartitionable { threshold: f64, cell_norm: f64 },
    /// Drift norm exceeds the calibrated smallness threshold; the interval
    /// must be shortened before the fixed-point map contracts.
    IntervalTooLong { norm: f64, threshold: f64 },
    /// Fixed-point iteration failed to contract (ratio >= 1 on three
    /// consecutive steps) or hit the iteration cap.
    NoContraction { iterations: usize, last_ratio: f64 },
    /// Transform gradient too large for the Zvonkin window.
    GradientTooLarge { sup: f64, bound: f64 },
    /// Newton inversion left the trusted domain or failed to converge.
    InversionFailed { residual: f64 },
    /// Point outside the domain on which an operation is defined.
    OutOfDomain(String),
    /// Mismatched grids, ranks, or dimensions between operands.
    ShapeMismatch(String),
    /// Monte Carlo configuration rejected (zero paths, bad step, ...).
    InvalidConfig(String),
}

impl core::fmt::Display for Error {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Error::InvalidGrid(msg) => write!(f, "invalid grid: {msg}"),
            Error::InvalidExponents(msg) => write!(f, "invalid exponents: {msg}"),
            Error::EmptyInput(msg) => write!(f, "empty input: {msg}"),
            Error::UnmollifiedSingularity => {
                write!(f, "field evaluated at its unmollified singularity")
            }
            Error::MollifierTooWide { epsilon, extent } => write!(
                f,
                "mollifier radius {epsilon} exceeds box half-width {extent}"
            ),
            Error::IntervalOutOfRange { start, end } => {
                write!(f, "interval [{start}, {end}] not contained in the grid horizon")
            }
            Error::NotPartitionable { threshold, cell_norm } => write!(
                f,
                "a single time cell has norm {cell_norm} >= threshold {threshold}; \
                 refine the time step"
            ),
            Error::IntervalTooLong { norm, threshold } => write!(
                f,
                "drift norm {norm} above contraction threshold {threshold}; \
                 partition the interval"
            ),
            Error::NoContraction { iterations, last_ratio } => write!(
                f,
                "fixed-point iteration not contracting after {iterations} steps \
                 (last ratio {last_ratio})"
            ),
            Error::GradientTooLarge { sup, bound } => write!(
                f,
                "sup |grad u| = {sup} exceeds {bound}; interval too long for the transform"
            ),
            Error::InversionFailed { residual } => {
                write!(f, "Newton inversion failed (residual {residual})")
            }
            Error::OutOfDomain(msg) => write!(f, "out of domain: {msg}"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

//! Space-time lattices, sampled fields, and the discrete calculus on them.
//!
//! Conventions fixed here and relied on by every other module:
//!
//! * the spatial domain is the box `[-L, L]^d`, `d <= 3`, with uniform step
//!   `h` dividing `L` exactly; fields are extended by zero outside the box;
//! * time runs over `[t0, t1]` with uniform step `tau` dividing the span;
//! * vector / matrix / rank-3 values are stored flat per node and measured
//!   pointwise by the Euclidean (Hilbert-Schmidt) magnitude;
//! * first differences are centered and second order in the interior,
//!   one-sided second order at walls; diagonal second differences use the
//!   3-point stencil inside and a 4-point one-sided stencil at walls, so
//!   degree-2 polynomials differentiate exactly everywhere.

use crate::error::{Error, Result};
use crate::math;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub const MAX_DIM: usize = 3;

/// Tolerance for "divides exactly" checks on grid parameters.
const DIVISIBILITY_TOL: f64 = 1e-9;

/// A uniform lattice on `[-L, L]^d x [t0, t1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    dim: usize,
    extent: f64,
    h: f64,
    t0: f64,
    t1: f64,
    tau: f64,
    axis_nodes: usize,
    time_cells: usize,
}

impl GridSpec {
    /// Space-time lattice. `extent` is the half-width `L`; `h` must divide
    /// `L` (so the origin and the walls are nodes) and `tau` must divide
    /// `t1 - t0`.
    pub fn new(dim: usize, extent: f64, h: f64, t0: f64, t1: f64, tau: f64) -> Result<Self> {
        if !(t1 > t0) {
            return Err(Error::InvalidGrid(format!("need t0 < t1, got [{t0}, {t1}]")));
        }
        Self::build(dim, extent, h, t0, t1, tau)
    }

    /// Purely spatial lattice (a single time node at `t = 0`). Used for
    /// autonomous tabulated fields and kernel slices.
    pub fn new_spatial(dim: usize, extent: f64, h: f64) -> Result<Self> {
        Self::build(dim, extent, h, 0.0, 0.0, 1.0)
    }

    fn build(dim: usize, extent: f64, h: f64, t0: f64, t1: f64, tau: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidGrid(format!("dimension {dim} outside 1..=3")));
        }
        if !(extent > 0.0) || !(h > 0.0) || !(tau > 0.0) {
            return Err(Error::InvalidGrid(String::from("extent, h, tau must be positive")));
        }
        let half_cells = extent / h;
        if math::abs(half_cells - math::round(half_cells)) > DIVISIBILITY_TOL * half_cells.max(1.0)
        {
            return Err(Error::InvalidGrid(format!("h = {h} does not divide extent {extent}")));
        }
        let half_cells = math::round(half_cells) as usize;
        let axis_nodes = 2 * half_cells + 1;
        if axis_nodes < 4 {
            return Err(Error::InvalidGrid(format!(
                "{axis_nodes} nodes per axis; need at least 4 (extent/h >= 2)"
            )));
        }
        let span = t1 - t0;
        let cells = span / tau;
        if math::abs(cells - math::round(cells)) > DIVISIBILITY_TOL * cells.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "tau = {tau} does not divide the time span {span}"
            )));
        }
        Ok(GridSpec {
            dim,
            extent,
            h,
            t0,
            t1,
            tau,
            axis_nodes,
            time_cells: math::round(cells) as usize,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn axis_nodes(&self) -> usize {
        self.axis_nodes
    }

    pub fn spatial_nodes(&self) -> usize {
        self.axis_nodes.pow(self.dim as u32)
    }

    pub fn time_cells(&self) -> usize {
        self.time_cells
    }

    pub fn time_nodes(&self) -> usize {
        self.time_cells + 1
    }

    pub fn time_at(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.tau
    }

    /// Volume `h^d` of one spatial cell.
    pub fn cell_volume(&self) -> f64 {
        let mut v = 1.0;
        for _ in 0..self.dim {
            v *= self.h;
        }
        v
    }

    /// Coordinate of node index `i` along one axis.
    pub fn axis_coord(&self, i: usize) -> f64 {
        -self.extent + i as f64 * self.h
    }

    /// Decodes a flat spatial index into per-axis node indices.
    #[inline]
    pub fn axis_indices(&self, s: usize, out: &mut [usize]) {
        let n = self.axis_nodes;
        let mut rem = s;
        for k in (0..self.dim).rev() {
            out[k] = rem % n;
            rem /= n;
        }
    }

    /// Decodes a flat spatial index into coordinates.
    #[inline]
    pub fn coords_of(&self, s: usize, out: &mut [f64]) {
        let n = self.axis_nodes;
        let mut rem = s;
        for k in (0..self.dim).rev() {
            out[k] = self.axis_coord(rem % n);
            rem /= n;
        }
    }

    /// Flat index from per-axis indices.
    #[inline]
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let mut s = 0;
        for k in 0..self.dim {
            s = s * self.axis_nodes + idx[k];
        }
        s
    }

    /// Flat index after an integer offset, or `None` if it leaves the box.
    #[inline]
    pub fn offset_index(&self, idx: &[usize], offset: &[isize]) -> Option<usize> {
        let mut s = 0usize;
        for k in 0..self.dim {
            let i = idx[k] as isize + offset[k];
            if i < 0 || i >= self.axis_nodes as isize {
                return None;
            }
            s = s * self.axis_nodes + i as usize;
        }
        Some(s)
    }

    /// Index of the grid time nearest to `t`; errors when `t` is not a grid
    /// time (within `1e-9 * tau`).
    pub fn time_index_of(&self, t: f64) -> Result<usize> {
        let rel = (t - self.t0) / self.tau;
        let j = math::round(rel);
        if math::abs(rel - j) > 1e-9 * (1.0 + math::abs(rel)) || j < 0.0 || j > self.time_cells as f64
        {
            return Err(Error::IntervalOutOfRange { start: t, end: t });
        }
        Ok(j as usize)
    }

    /// Same box, different time window. Endpoints must be grid-aligned
    /// multiples of `tau` inside no particular horizon (the PDE layer uses
    /// this to build per-interval grids).
    pub fn with_time_window(&self, t0: f64, t1: f64) -> Result<GridSpec> {
        GridSpec::new(self.dim, self.extent, self.h, t0, t1, self.tau)
    }

    /// Largest lattice-ball radius index used by the maximal function.
    pub fn maximal_ball_cap(&self) -> usize {
        (self.axis_nodes - 1) / 2
    }
}

/// Tensor rank of a field's per-node value block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rank {
    Scalar,
    Vector,
    Matrix,
    /// Third derivatives of scalars / Hessians of vector fields.
    Tensor3,
}

impl Rank {
    pub fn components(self, dim: usize) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => dim,
            Rank::Matrix => dim * dim,
            Rank::Tensor3 => dim * dim * dim,
        }
    }

    /// Rank after one spatial gradient.
    pub fn raised(self) -> Option<Rank> {
        match self {
            Rank::Scalar => Some(Rank::Vector),
            Rank::Vector => Some(Rank::Matrix),
            Rank::Matrix => Some(Rank::Tensor3),
            Rank::Tensor3 => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Rank::Scalar => "scalar",
            Rank::Vector => "vector",
            Rank::Matrix => "matrix",
            Rank::Tensor3 => "tensor3",
        }
    }
}

/// A field sampled on a `GridSpec`: one flat value block per node, laid out
/// `[time][space][component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: GridSpec,
    rank: Rank,
    ncomp: usize,
    values: Vec<f64>,
    label: String,
}

impl GridFunction {
    pub fn zeros(grid: &GridSpec, rank: Rank, label: &str) -> Self {
        let ncomp = rank.components(grid.dim());
        let len = grid.time_nodes() * grid.spatial_nodes() * ncomp;
        GridFunction {
            grid: grid.clone(),
            rank,
            ncomp,
            values: vec![0.0; len],
            label: String::from(label),
        }
    }

    pub fn from_values(grid: &GridSpec, rank: Rank, values: Vec<f64>, label: &str) -> Result<Self> {
        let ncomp = rank.components(grid.dim());
        let expect = grid.time_nodes() * grid.spatial_nodes() * ncomp;
        if values.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "value buffer has {} entries, grid wants {expect}",
                values.len()
            )));
        }
        Ok(GridFunction { grid: grid.clone(), rank, ncomp, values, label: String::from(label) })
    }

    /// Samples a scalar rule `f(t, x)` at every node.
    pub fn sample_scalar(grid: &GridSpec, label: &str, f: impl Fn(f64, &[f64]) -> f64) -> Self {
        let mut out = Self::zeros(grid, Rank::Scalar, label);
        let nsp = grid.spatial_nodes();
        let mut x = [0.0; MAX_DIM];
        for j in 0..grid.time_nodes() {
            let t = grid.time_at(j);
            for s in 0..nsp {
                grid.coords_of(s, &mut x[..grid.dim()]);
                out.values[j * nsp + s] = f(t, &x[..grid.dim()]);
            }
        }
        out
    }

    /// Samples a vector rule writing `d` components per node.
    pub fn sample_vector(
        grid: &GridSpec,
        label: &str,
        f: impl Fn(f64, &[f64], &mut [f64]),
    ) -> Self {
        let mut out = Self::zeros(grid, Rank::Vector, label);
        let nsp = grid.spatial_nodes();
        let d = grid.dim();
        let mut x = [0.0; MAX_DIM];
        for j in 0..grid.time_nodes() {
            let t = grid.time_at(j);
            for s in 0..nsp {
                grid.coords_of(s, &mut x[..d]);
                let base = (j * nsp + s) * d;
                f(t, &x[..d], &mut out.values[base..base + d]);
            }
        }
        out
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn set_label(&mut self, label: &str) {
        self.label = String::from(label);
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    fn block(&self, j: usize, s: usize) -> &[f64] {
        let base = (j * self.grid.spatial_nodes() + s) * self.ncomp;
        &self.values[base..base + self.ncomp]
    }

    #[inline]
    pub fn value(&self, j: usize, s: usize, c: usize) -> f64 {
        self.values[(j * self.grid.spatial_nodes() + s) * self.ncomp + c]
    }

    #[inline]
    pub fn set(&mut self, j: usize, s: usize, c: usize, v: f64) {
        self.values[(j * self.grid.spatial_nodes() + s) * self.ncomp + c] = v;
    }

    /// Pointwise magnitude at a node: `|.|` for scalars, Euclidean for
    /// vectors, Hilbert-Schmidt for higher ranks.
    #[inline]
    pub fn magnitude(&self, j: usize, s: usize) -> f64 {
        math::norm2(self.block(j, s))
    }

    /// Max pointwise magnitude over all nodes.
    pub fn sup_magnitude(&self) -> f64 {
        let mut sup: f64 = 0.0;
        let nsp = self.grid.spatial_nodes();
        for j in 0..self.grid.time_nodes() {
            for s in 0..nsp {
                sup = sup.max(self.magnitude(j, s));
            }
        }
        sup
    }

    /// Max pointwise magnitude over one time slice.
    pub fn sup_magnitude_at(&self, j: usize) -> f64 {
        let mut sup: f64 = 0.0;
        for s in 0..self.grid.spatial_nodes() {
            sup = sup.max(self.magnitude(j, s));
        }
        sup
    }

    pub fn scaled(&self, a: f64) -> GridFunction {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= a;
        }
        out
    }

    /// `self - other`; grids, ranks must match.
    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.check_same_shape(other)?;
        let mut out = self.clone();
        for (v, w) in out.values.iter_mut().zip(other.values.iter()) {
            *v -= w;
        }
        Ok(out)
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        self.check_same_shape(other)?;
        let mut out = self.clone();
        for (v, w) in out.values.iter_mut().zip(other.values.iter()) {
            *v += w;
        }
        Ok(out)
    }

    fn check_same_shape(&self, other: &GridFunction) -> Result<()> {
        if self.grid != other.grid || self.rank != other.rank {
            return Err(Error::ShapeMismatch(format!(
                "fields '{}' ({}) and '{}' ({}) live on different grids or ranks",
                self.label,
                self.rank.name(),
                other.label,
                other.rank.name()
            )));
        }
        Ok(())
    }

    /// Scalar field of pointwise magnitudes.
    pub fn magnitude_field(&self) -> GridFunction {
        let mut out = GridFunction::zeros(&self.grid, Rank::Scalar, &self.label);
        let nsp = self.grid.spatial_nodes();
        for j in 0..self.grid.time_nodes() {
            for s in 0..nsp {
                out.values[j * nsp + s] = self.magnitude(j, s);
            }
        }
        out
    }

    /// Zeroes every node closer than `margin` to a spatial wall. Norms of
    /// the result see only the interior core, where the zero-extension
    /// boundary convention is exact up to Gaussian-tail truncation.
    pub fn masked_interior(&self, margin: f64) -> GridFunction {
        let mut out = self.clone();
        let nsp = self.grid.spatial_nodes();
        let d = self.grid.dim();
        let mut x = [0.0; MAX_DIM];
        for s in 0..nsp {
            self.grid.coords_of(s, &mut x[..d]);
            let mut wall = f64::INFINITY;
            for &xi in &x[..d] {
                wall = wall.min(self.grid.extent() - math::abs(xi));
            }
            if wall < margin {
                for j in 0..self.grid.time_nodes() {
                    let base = (j * nsp + s) * self.ncomp;
                    for c in 0..self.ncomp {
                        out.values[base + c] = 0.0;
                    }
                }
            }
        }
        out
    }

    /// Multilinear interpolation of all components at `(t, x)`, with zero
    /// extension outside the box and clamping to the time horizon. Fields on
    /// a spatial-only grid are treated as autonomous.
    pub fn interp(&self, t: f64, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.ncomp);
        let g = &self.grid;
        let d = g.dim();
        out.fill(0.0);

        // Per-axis lower cell index and weight of the upper neighbor.
        let mut lo = [0isize; MAX_DIM];
        let mut whi = [0.0; MAX_DIM];
        for k in 0..d {
            let rel = (x[k] + g.extent()) / g.h();
            let fl = math::floor(rel);
            lo[k] = fl as isize;
            whi[k] = rel - fl;
            // Entirely outside the box (allowing the half-open top cell).
            if rel < -1.0 + 1e-12 || rel > g.axis_nodes() as f64 - 1e-12 {
                return;
            }
        }

        let (j_lo, tw) = if g.time_cells() == 0 {
            (0usize, 0.0)
        } else {
            let rel = ((t - g.t0()) / g.tau()).clamp(0.0, g.time_cells() as f64);
            let fl = math::floor(rel).min(g.time_cells() as f64 - 1.0);
            (fl as usize, rel - fl)
        };

        let nsp = g.spatial_nodes();
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut flat = 0usize;
            let mut inside = true;
            for k in 0..d {
                let up = (corner >> k) & 1 == 1;
                let i = lo[k] + if up { 1 } else { 0 };
                weight *= if up { whi[k] } else { 1.0 - whi[k] };
                if i < 0 || i >= g.axis_nodes() as isize {
                    inside = false;
                    break;
                }
                flat = flat * g.axis_nodes() + i as usize;
            }
            if !inside || weight == 0.0 {
                continue;
            }
            let base_lo = (j_lo * nsp + flat) * self.ncomp;
            if tw == 0.0 {
                for c in 0..self.ncomp {
                    out[c] += weight * self.values[base_lo + c];
                }
            } else {
                let base_hi = ((j_lo + 1) * nsp + flat) * self.ncomp;
                for c in 0..self.ncomp {
                    out[c] += weight
                        * ((1.0 - tw) * self.values[base_lo + c] + tw * self.values[base_hi + c]);
                }
            }
        }
    }
}

/// Closed-form drift families plus grid-tabulated fields.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftFamily {
    /// Spatially and temporally constant vector.
    Constant { value: Vec<f64> },
    /// `amplitude_i * exp(-|x - center|^2 / (2 width^2))`.
    GaussianBump { amplitude: Vec<f64>, center: Vec<f64>, width: f64 },
    /// `sign * beta * x / (|x|^2 + epsilon^2)`; `epsilon = 0` is the
    /// singular field itself. The inward sign is the supercritical probe.
    InverseRadial { dim: usize, beta: f64, outward: bool, epsilon: f64 },
    /// Interpolated samples, typically a mollified closed-form family.
    Tabulated { field: GridFunction },
}

/// A drift coefficient `b(t, x)` that can be evaluated off-lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftSpec {
    family: DriftFamily,
}

impl DriftSpec {
    pub fn constant(value: Vec<f64>) -> Result<Self> {
        if value.is_empty() || value.len() > MAX_DIM {
            return Err(Error::InvalidConfig(String::from("constant drift needs 1..=3 components")));
        }
        Ok(DriftSpec { family: DriftFamily::Constant { value } })
    }

    pub fn gaussian_bump(amplitude: Vec<f64>, center: Vec<f64>, width: f64) -> Result<Self> {
        if amplitude.len() != center.len() || amplitude.is_empty() || amplitude.len() > MAX_DIM {
            return Err(Error::InvalidConfig(String::from(
                "bump drift needs matching 1..=3 component amplitude and center",
            )));
        }
        if !(width > 0.0) {
            return Err(Error::InvalidConfig(String::from("bump width must be positive")));
        }
        Ok(DriftSpec { family: DriftFamily::GaussianBump { amplitude, center, width } })
    }

    pub fn inverse_radial(dim: usize, beta: f64, outward: bool, epsilon: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidConfig(String::from("dimension outside 1..=3")));
        }
        if epsilon < 0.0 {
            return Err(Error::InvalidConfig(String::from("epsilon must be nonnegative")));
        }
        Ok(DriftSpec { family: DriftFamily::InverseRadial { dim, beta, outward, epsilon } })
    }

    pub fn tabulated(field: GridFunction) -> Result<Self> {
        if field.rank() != Rank::Vector {
            return Err(Error::InvalidConfig(String::from("tabulated drift must be vector-rank")));
        }
        Ok(DriftSpec { family: DriftFamily::Tabulated { field } })
    }

    pub fn family(&self) -> &DriftFamily {
        &self.family
    }

    pub fn dim(&self) -> usize {
        match &self.family {
            DriftFamily::Constant { value } => value.len(),
            DriftFamily::GaussianBump { amplitude, .. } => amplitude.len(),
            DriftFamily::InverseRadial { dim, .. } => *dim,
            DriftFamily::Tabulated { field } => field.grid().dim(),
        }
    }

    /// True for the inverse-radial family, whose unmollified profile sits
    /// strictly above the critical integrability scale.
    pub fn supercritical(&self) -> bool {
        matches!(self.family, DriftFamily::InverseRadial { .. })
    }

    /// Evaluates `b(t, x)` into `out` (length `dim`).
    #[inline]
    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.family {
            DriftFamily::Constant { value } => out.copy_from_slice(value),
            DriftFamily::GaussianBump { amplitude, center, width } => {
                let mut q = 0.0;
                for k in 0..center.len() {
                    let dxk = x[k] - center[k];
                    q += dxk * dxk;
                }
                let g = math::exp(-q / (2.0 * width * width));
                for k in 0..amplitude.len() {
                    out[k] = amplitude[k] * g;
                }
            }
            DriftFamily::InverseRadial { dim, beta, outward, epsilon } => {
                let r2 = math::norm2_sq(&x[..*dim]) + epsilon * epsilon;
                if r2 == 0.0 {
                    return Err(Error::UnmollifiedSingularity);
                }
                let factor = if *outward { *beta / r2 } else { -*beta / r2 };
                for k in 0..*dim {
                    out[k] = factor * x[k];
                }
            }
            DriftFamily::Tabulated { field } => field.interp(t, x, out),
        }
        Ok(())
    }

    /// The drift mollified at scale `epsilon`.
    ///
    /// Constants are fixed points of any mass-one mollifier and pass
    /// through; the inverse-radial family has the analytic rule (replace
    /// `|x|^2` by `|x|^2 + epsilon^2`); everything else is sampled on `grid`
    /// and convolved with the discrete bump kernel.
    pub fn mollified(&self, grid: &GridSpec, epsilon: f64) -> Result<DriftSpec> {
        match &self.family {
            DriftFamily::Constant { .. } => Ok(self.clone()),
            DriftFamily::InverseRadial { dim, beta, outward, .. } => {
                DriftSpec::inverse_radial(*dim, *beta, *outward, epsilon)
            }
            DriftFamily::GaussianBump { .. } | DriftFamily::Tabulated { .. } => {
                let sampled = sample_field(self, grid)?;
                DriftSpec::tabulated(mollify(&sampled, epsilon)?)
            }
        }
    }
}

/// Samples a drift on every node of `grid` as a vector-rank field.
///
/// Errors if the drift is singular on the grid (inverse-radial with
/// `epsilon = 0` on a grid containing the origin).
pub fn sample_field(spec: &DriftSpec, grid: &GridSpec) -> Result<GridFunction> {
    if spec.dim() != grid.dim() {
        return Err(Error::ShapeMismatch(format!(
            "drift dimension {} vs grid dimension {}",
            spec.dim(),
            grid.dim()
        )));
    }
    let mut out = GridFunction::zeros(grid, Rank::Vector, "b");
    let nsp = grid.spatial_nodes();
    let d = grid.dim();
    let mut x = [0.0; MAX_DIM];
    let mut bx = [0.0; MAX_DIM];
    for j in 0..grid.time_nodes() {
        let t = grid.time_at(j);
        for s in 0..nsp {
            grid.coords_of(s, &mut x[..d]);
            spec.eval_into(t, &x[..d], &mut bx[..d])?;
            let base = (j * nsp + s) * d;
            out.values[base..base + d].copy_from_slice(&bx[..d]);
        }
    }
    Ok(out)
}

/// Discrete mollification: convolution with the bump kernel
/// `(1 - |z/epsilon|^2)_+^2`, sampled on lattice offsets and normalized to
/// unit mass. Zero extension applies at walls, so mass there is lost, not
/// reflected. `epsilon = 0` (or below `h`) is the identity.
pub fn mollify(f: &GridFunction, epsilon: f64) -> Result<GridFunction> {
    if epsilon < 0.0 {
        return Err(Error::InvalidConfig(String::from("mollifier radius must be nonnegative")));
    }
    if epsilon > f.grid().extent() {
        return Err(Error::MollifierTooWide { epsilon, extent: f.grid().extent() });
    }
    let g = f.grid().clone();
    let d = g.dim();
    let reach = math::floor(epsilon / g.h()) as isize;
    if reach == 0 {
        return Ok(f.clone());
    }

    // Kernel offsets and weights, normalized to sum 1.
    let mut offsets: Vec<(Vec<isize>, f64)> = Vec::new();
    let mut total = 0.0;
    let mut z = vec![-reach; d];
    loop {
        let mut r2 = 0.0;
        for &zk in &z {
            let y = zk as f64 * g.h() / epsilon;
            r2 += y * y;
        }
        if r2 < 1.0 {
            let w = (1.0 - r2) * (1.0 - r2);
            total += w;
            offsets.push((z.clone(), w));
        }
        // Odometer increment over [-reach, reach]^d.
        let mut k = 0;
        loop {
            z[k] += 1;
            if z[k] <= reach {
                break;
            }
            z[k] = -reach;
            k += 1;
            if k == d {
                break;
            }
        }
        if k == d {
            break;
        }
    }
    for (_, w) in &mut offsets {
        *w /= total;
    }

    let nsp = g.spatial_nodes();
    let ncomp = f.ncomp();
    let mut out = GridFunction::zeros(&g, f.rank(), f.label());
    let mut idx = [0usize; MAX_DIM];
    for j in 0..g.time_nodes() {
        for s in 0..nsp {
            g.axis_indices(s, &mut idx[..d]);
            let mut acc = [0.0; MAX_DIM * MAX_DIM * MAX_DIM];
            for (z, w) in &offsets {
                if let Some(sn) = g.offset_index(&idx[..d], z) {
                    let block = f.block(j, sn);
                    for c in 0..ncomp {
                        acc[c] += w * block[c];
                    }
                }
            }
            let base = (j * nsp + s) * ncomp;
            out.values[base..base + ncomp].copy_from_slice(&acc[..ncomp]);
        }
    }
    Ok(out)
}

/// Spatial or temporal finite-difference operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffOp {
    /// First spatial differences; rank rises by one.
    Grad,
    /// Second spatial differences; rank rises by two.
    Hessian,
    /// First time differences; rank unchanged.
    TimeDeriv,
}

/// First difference of one component along one axis at a node, second order
/// everywhere (centered inside, one-sided at walls).
#[inline]
fn axis_first_diff(f: &GridFunction, j: usize, idx: &[usize], axis: usize, c: usize) -> f64 {
    let g = f.grid();
    let n = g.axis_nodes();
    let i = idx[axis];
    let at = |sh: isize| -> f64 {
        let mut off = [0isize; MAX_DIM];
        off[axis] = sh;
        let s = g.offset_index(idx, &off[..g.dim()]).expect("stencil stays inside the box");
        f.value(j, s, c)
    };
    let inv = 1.0 / (2.0 * g.h());
    if i == 0 {
        (-3.0 * at(0) + 4.0 * at(1) - at(2)) * inv
    } else if i == n - 1 {
        (3.0 * at(0) - 4.0 * at(-1) + at(-2)) * inv
    } else {
        (at(1) - at(-1)) * inv
    }
}

/// Diagonal second difference along one axis, second order everywhere.
#[inline]
fn axis_second_diff(f: &GridFunction, j: usize, idx: &[usize], axis: usize, c: usize) -> f64 {
    let g = f.grid();
    let n = g.axis_nodes();
    let i = idx[axis];
    let at = |sh: isize| -> f64 {
        let mut off = [0isize; MAX_DIM];
        off[axis] = sh;
        let s = g.offset_index(idx, &off[..g.dim()]).expect("stencil stays inside the box");
        f.value(j, s, c)
    };
    let inv = 1.0 / (g.h() * g.h());
    if i == 0 {
        (2.0 * at(0) - 5.0 * at(1) + 4.0 * at(2) - at(3)) * inv
    } else if i == n - 1 {
        (2.0 * at(0) - 5.0 * at(-1) + 4.0 * at(-2) - at(-3)) * inv
    } else {
        (at(1) - 2.0 * at(0) + at(-1)) * inv
    }
}

/// Finite differences with rank promotion.
///
/// Component layout after `Grad`: input component `c` and axis `a` land at
/// `c * d + a`. `Hessian` applies the same rule twice (`(c*d + a)*d + b` is
/// `d_b d_a` of component `c`) with the diagonal entries recomputed by the
/// tight 3-point / one-sided 4-point stencils. Exact on polynomials of
/// degree 2 in space; `TimeDeriv` is exact on degree-2 polynomials in time.
pub fn finite_diff(f: &GridFunction, op: DiffOp) -> Result<GridFunction> {
    match op {
        DiffOp::Grad => gradient(f),
        DiffOp::Hessian => hessian(f),
        DiffOp::TimeDeriv => time_derivative(f),
    }
}

fn gradient(f: &GridFunction) -> Result<GridFunction> {
    let g = f.grid().clone();
    let rank = f.rank().raised().ok_or_else(|| {
        Error::ShapeMismatch(String::from("gradient of a rank-3 field is not supported"))
    })?;
    let d = g.dim();
    let nsp = g.spatial_nodes();
    let mut out = GridFunction::zeros(&g, rank, f.label());
    let mut idx = [0usize; MAX_DIM];
    for j in 0..g.time_nodes() {
        for s in 0..nsp {
            g.axis_indices(s, &mut idx[..d]);
            let base = (j * nsp + s) * out.ncomp;
            for c in 0..f.ncomp() {
                for a in 0..d {
                    out.values[base + c * d + a] = axis_first_diff(f, j, &idx[..d], a, c);
                }
            }
        }
    }
    Ok(out)
}

fn hessian(f: &GridFunction) -> Result<GridFunction> {
    if f.rank().raised().and_then(Rank::raised).is_none() {
        return Err(Error::ShapeMismatch(String::from(
            "second differences limited to scalar and vector fields",
        )));
    }
    let grad = gradient(f)?;
    let mut out = gradient(&grad)?;
    // Replace the wide composed diagonal with the tight direct stencil.
    let g = f.grid().clone();
    let d = g.dim();
    let nsp = g.spatial_nodes();
    let mut idx = [0usize; MAX_DIM];
    for j in 0..g.time_nodes() {
        for s in 0..nsp {
            g.axis_indices(s, &mut idx[..d]);
            let base = (j * nsp + s) * out.ncomp;
            for c in 0..f.ncomp() {
                for a in 0..d {
                    out.values[base + (c * d + a) * d + a] =
                        axis_second_diff(f, j, &idx[..d], a, c);
                }
            }
        }
    }
    Ok(out)
}

fn time_derivative(f: &GridFunction) -> Result<GridFunction> {
    let g = f.grid().clone();
    if g.time_nodes() < 3 {
        return Err(Error::InvalidGrid(String::from(
            "time derivative needs at least three time nodes",
        )));
    }
    let nsp = g.spatial_nodes();
    let nc = f.ncomp();
    let m = g.time_cells();
    let inv = 1.0 / (2.0 * g.tau());
    let mut out = GridFunction::zeros(&g, f.rank(), f.label());
    for j in 0..=m {
        for s in 0..nsp {
            for c in 0..nc {
                let v = if j == 0 {
                    (-3.0 * f.value(0, s, c) + 4.0 * f.value(1, s, c) - f.value(2, s, c)) * inv
                } else if j == m {
                    (3.0 * f.value(m, s, c) - 4.0 * f.value(m - 1, s, c) + f.value(m - 2, s, c))
                        * inv
                } else {
                    (f.value(j + 1, s, c) - f.value(j - 1, s, c)) * inv
                };
                out.set(j, s, c, v);
            }
        }
    }
    Ok(out)
}

/// Laplacian (trace of the Hessian), rank-preserving. Cheaper than a full
/// `Hessian` when only the trace is needed, and avoids rank-3 storage for
/// vector fields.
pub fn laplacian(f: &GridFunction) -> Result<GridFunction> {
    let g = f.grid().clone();
    let d = g.dim();
    let nsp = g.spatial_nodes();
    let mut out = GridFunction::zeros(&g, f.rank(), f.label());
    let mut idx = [0usize; MAX_DIM];
    for j in 0..g.time_nodes() {
        for s in 0..nsp {
            g.axis_indices(s, &mut idx[..d]);
            let base = (j * nsp + s) * f.ncomp();
            for c in 0..f.ncomp() {
                let mut acc = 0.0;
                for a in 0..d {
                    acc += axis_second_diff(f, j, &idx[..d], a, c);
                }
                out.values[base + c] = acc;
            }
        }
    }
    Ok(out)
}

/// Lattice Hardy-Littlewood maximal function.
///
/// At each node the value is the largest average of `|f|` over the lattice
/// balls `B(x, k h)` intersected with the grid, `k = 0..=L/h` (`k = 0` is
/// the point value itself). Averages count only in-grid nodes, so walls do
/// not dilute the average.
pub fn maximal_function(f: &GridFunction) -> GridFunction {
    let g = f.grid().clone();
    let d = g.dim();
    let nsp = g.spatial_nodes();
    let cap = g.maximal_ball_cap();

    // Shell k holds offsets with (k-1)^2 < |z|^2 <= k^2, so ball averages
    // accumulate incrementally.
    let mut shells: Vec<Vec<Vec<isize>>> = vec![Vec::new(); cap + 1];
    let mut z = vec![-(cap as isize); d];
    loop {
        let r2: isize = z.iter().map(|&v| v * v).sum();
        if r2 <= (cap * cap) as isize {
            let k = math::ceil(math::sqrt(r2 as f64)) as usize;
            shells[k].push(z.clone());
        }
        let mut k = 0;
        loop {
            z[k] += 1;
            if z[k] <= cap as isize {
                break;
            }
            z[k] = -(cap as isize);
            k += 1;
            if k == d {
                break;
            }
        }
        if k == d {
            break;
        }
    }

    let mut out = GridFunction::zeros(&g, Rank::Scalar, f.label());
    let mut idx = [0usize; MAX_DIM];
    for j in 0..g.time_nodes() {
        for s in 0..nsp {
            g.axis_indices(s, &mut idx[..d]);
            let mut sum = 0.0;
            let mut count = 0usize;
            let mut best: f64 = 0.0;
            for shell in &shells {
                for z in shell {
                    if let Some(sn) = g.offset_index(&idx[..d], z) {
                        sum += f.magnitude(j, sn);
                        count += 1;
                    }
                }
                if count > 0 {
                    best = best.max(sum / count as f64);
                }
            }
            out.values[j * nsp + s] = best;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_grid() -> GridSpec {
        GridSpec::new(2, 2.0, 0.5, 0.0, 1.0, 0.25).unwrap()
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(GridSpec::new(0, 2.0, 0.5, 0.0, 1.0, 0.25).is_err());
        assert!(GridSpec::new(4, 2.0, 0.5, 0.0, 1.0, 0.25).is_err());
        assert!(GridSpec::new(2, 2.0, 0.3, 0.0, 1.0, 0.25).is_err());
        assert!(GridSpec::new(2, 2.0, 0.5, 0.0, 1.0, 0.3).is_err());
        assert!(GridSpec::new(2, 2.0, 0.5, 1.0, 0.0, 0.25).is_err());
        assert!(GridSpec::new(1, 0.5, 0.5, 0.0, 1.0, 0.5).is_err(), "too few nodes per axis");
    }

    #[test]
    fn grid_node_layout_round_trips() {
        let g = unit_grid();
        assert_eq!(g.axis_nodes(), 9);
        assert_eq!(g.spatial_nodes(), 81);
        assert_eq!(g.time_nodes(), 5);
        let mut idx = [0usize; 2];
        let mut x = [0.0; 2];
        for s in 0..g.spatial_nodes() {
            g.axis_indices(s, &mut idx);
            assert_eq!(g.flat_index(&idx), s);
            g.coords_of(s, &mut x);
            for k in 0..2 {
                assert_relative_eq!(x[k], g.axis_coord(idx[k]));
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = unit_grid();
        let f = |t: f64, x: &[f64]| t + x[0] * x[1];
        let a = GridFunction::sample_scalar(&g, "f", f);
        let b = GridFunction::sample_scalar(&g, "f", f);
        assert_eq!(a, b);
    }

    #[test]
    fn interp_matches_nodes_and_is_linear_between() {
        let g = GridSpec::new(1, 2.0, 0.5, 0.0, 1.0, 0.5).unwrap();
        let f = GridFunction::sample_scalar(&g, "lin", |t, x| 2.0 * x[0] + t);
        let mut out = [0.0];
        f.interp(0.0, &[0.25], &mut out);
        assert_relative_eq!(out[0], 0.5, epsilon = 1e-12);
        f.interp(0.5, &[0.75], &mut out);
        assert_relative_eq!(out[0], 2.0, epsilon = 1e-12);
        // Outside the box the zero extension wins.
        f.interp(0.0, &[5.0], &mut out);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn mollifier_is_identity_below_h_and_rejects_wide_radii() {
        let g = unit_grid();
        let f = GridFunction::sample_scalar(&g, "f", |_, x| x[0]);
        assert_eq!(mollify(&f, 0.0).unwrap(), f);
        assert_eq!(mollify(&f, 0.4).unwrap(), f);
        assert!(matches!(mollify(&f, 2.5), Err(Error::MollifierTooWide { .. })));
    }

    #[test]
    fn mollifier_preserves_interior_mass_and_positivity() {
        let g = GridSpec::new(2, 2.0, 0.25, 0.0, 0.25, 0.25).unwrap();
        // Indicator of a centered block.
        let f = GridFunction::sample_scalar(&g, "ind", |_, x| {
            if math::abs(x[0]) <= 0.5 && math::abs(x[1]) <= 0.5 {
                1.0
            } else {
                0.0
            }
        });
        let m = mollify(&f, 0.6).unwrap();
        let mass = |u: &GridFunction| -> f64 {
            (0..g.spatial_nodes()).map(|s| u.value(0, s, 0)).sum::<f64>() * g.cell_volume()
        };
        for s in 0..g.spatial_nodes() {
            let v = m.value(0, s, 0);
            assert!((-1e-14..=1.0 + 1e-14).contains(&v), "range preserved, got {v}");
        }
        // Support is far from the walls, so no mass escapes the box.
        assert_relative_eq!(mass(&m), mass(&f), epsilon = 1e-12);
    }

    #[test]
    fn constant_drift_mollifies_to_itself() {
        let g = unit_grid();
        let b = DriftSpec::constant(alloc::vec![0.3, -0.1]).unwrap();
        let bm = b.mollified(&g, 0.5).unwrap();
        let mut out = [0.0; 2];
        bm.eval_into(0.2, &[0.7, -0.3], &mut out).unwrap();
        assert_eq!(out, [0.3, -0.1]);
    }

    #[test]
    fn singular_field_errors_without_mollification() {
        let g = unit_grid();
        let b = DriftSpec::inverse_radial(2, 1.0, false, 0.0).unwrap();
        assert!(matches!(sample_field(&b, &g), Err(Error::UnmollifiedSingularity)));
        let b_eps = DriftSpec::inverse_radial(2, 1.0, false, 0.1).unwrap();
        assert!(sample_field(&b_eps, &g).is_ok());
    }

    #[test]
    fn inverse_radial_signs_point_as_named() {
        let inward = DriftSpec::inverse_radial(2, 1.0, false, 0.1).unwrap();
        let outward = DriftSpec::inverse_radial(2, 1.0, true, 0.1).unwrap();
        let mut bi = [0.0; 2];
        let mut bo = [0.0; 2];
        inward.eval_into(0.0, &[1.0, 0.0], &mut bi).unwrap();
        outward.eval_into(0.0, &[1.0, 0.0], &mut bo).unwrap();
        assert!(bi[0] < 0.0 && bo[0] > 0.0);
        assert!(inward.supercritical());
    }

    proptest! {
        #[test]
        fn gradient_exact_on_quadratics(
            a in -2.0f64..2.0, bx in -2.0f64..2.0, by in -2.0f64..2.0,
            cxx in -2.0f64..2.0, cxy in -2.0f64..2.0, cyy in -2.0f64..2.0,
        ) {
            let g = GridSpec::new(2, 1.0, 0.25, 0.0, 0.25, 0.25).unwrap();
            let f = GridFunction::sample_scalar(&g, "q", |_, x| {
                a + bx * x[0] + by * x[1] + cxx * x[0] * x[0] + cxy * x[0] * x[1] + cyy * x[1] * x[1]
            });
            let grad = finite_diff(&f, DiffOp::Grad).unwrap();
            let mut x = [0.0; 2];
            for s in 0..g.spatial_nodes() {
                g.coords_of(s, &mut x);
                let gx = bx + 2.0 * cxx * x[0] + cxy * x[1];
                let gy = by + 2.0 * cyy * x[1] + cxy * x[0];
                prop_assert!((grad.value(0, s, 0) - gx).abs() < 1e-10 * (1.0 + gx.abs()));
                prop_assert!((grad.value(0, s, 1) - gy).abs() < 1e-10 * (1.0 + gy.abs()));
            }
        }

        #[test]
        fn hessian_exact_on_quadratics(
            cxx in -2.0f64..2.0, cxy in -2.0f64..2.0, cyy in -2.0f64..2.0,
        ) {
            let g = GridSpec::new(2, 1.0, 0.25, 0.0, 0.25, 0.25).unwrap();
            let f = GridFunction::sample_scalar(&g, "q", |_, x| {
                cxx * x[0] * x[0] + cxy * x[0] * x[1] + cyy * x[1] * x[1]
            });
            let hess = finite_diff(&f, DiffOp::Hessian).unwrap();
            for s in 0..g.spatial_nodes() {
                let expected = [2.0 * cxx, cxy, cxy, 2.0 * cyy];
                for (c, want) in expected.iter().enumerate() {
                    prop_assert!((hess.value(0, s, c) - want).abs() < 1e-9 * (1.0 + want.abs()));
                }
            }
        }
    }

    #[test]
    fn time_derivative_exact_on_quadratic_time_profiles() {
        let g = GridSpec::new(1, 1.0, 0.25, 0.0, 1.0, 0.25).unwrap();
        let f = GridFunction::sample_scalar(&g, "q", |t, _| 1.0 + 2.0 * t - 3.0 * t * t);
        let ft = finite_diff(&f, DiffOp::TimeDeriv).unwrap();
        for j in 0..g.time_nodes() {
            let t = g.time_at(j);
            let want = 2.0 - 6.0 * t;
            for s in 0..g.spatial_nodes() {
                assert_relative_eq!(ft.value(j, s, 0), want, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn laplacian_matches_hessian_trace() {
        let g = GridSpec::new(2, 1.0, 0.25, 0.0, 0.25, 0.25).unwrap();
        let f = GridFunction::sample_scalar(&g, "f", |_, x| {
            math::exp(-(x[0] * x[0] + 0.5 * x[1] * x[1]))
        });
        let lap = laplacian(&f).unwrap();
        let hess = finite_diff(&f, DiffOp::Hessian).unwrap();
        for s in 0..g.spatial_nodes() {
            let trace = hess.value(0, s, 0) + hess.value(0, s, 3);
            assert_relative_eq!(lap.value(0, s, 0), trace, epsilon = 1e-10);
        }
    }

    #[test]
    fn maximal_function_of_constant_is_constant_and_dominates() {
        let g = GridSpec::new(2, 1.0, 0.25, 0.0, 0.25, 0.25).unwrap();
        let c = GridFunction::sample_scalar(&g, "c", |_, _| 0.7);
        let mc = maximal_function(&c);
        for s in 0..g.spatial_nodes() {
            assert_relative_eq!(mc.value(0, s, 0), 0.7, epsilon = 1e-14);
        }
        let f = GridFunction::sample_scalar(&g, "f", |_, x| x[0] - x[1] * x[1]);
        let mf = maximal_function(&f);
        for s in 0..g.spatial_nodes() {
            assert!(mf.value(0, s, 0) >= math::abs(f.value(0, s, 0)) - 1e-14);
        }
    }

    /// Pointwise bound by maximal functions of the gradient:
    /// `|u(x) - u(y)| <= N |x - y| (M|grad u|(x) + M|grad u|(y))`,
    /// with an empirical `N` that stays put under refinement.
    #[test]
    fn maximal_inequality_constant_stable_under_refinement() {
        let smooth = |x: &[f64]| {
            math::sin(2.0 * x[0]) * math::exp(-x[1] * x[1]) + 0.3 * math::cos(x[0] + 2.0 * x[1])
        };
        let empirical_n = |h: f64| -> f64 {
            let g = GridSpec::new(2, 1.0, h, 0.0, h, h).unwrap();
            let u = GridFunction::sample_scalar(&g, "u", |_, x| smooth(x));
            let grad = finite_diff(&u, DiffOp::Grad).unwrap();
            let m = maximal_function(&grad);
            let mut xs = [0.0; 2];
            let mut ys = [0.0; 2];
            let mut worst: f64 = 0.0;
            let nsp = g.spatial_nodes();
            // Deterministic subsample of pairs: stride keeps it quadratic-free.
            for s in (0..nsp).step_by(3) {
                for r in (1..nsp).step_by(7) {
                    let y = (s + r) % nsp;
                    if y == s {
                        continue;
                    }
                    g.coords_of(s, &mut xs);
                    g.coords_of(y, &mut ys);
                    let dist = math::sqrt(
                        (xs[0] - ys[0]) * (xs[0] - ys[0]) + (xs[1] - ys[1]) * (xs[1] - ys[1]),
                    );
                    let denom = dist * (m.value(0, s, 0) + m.value(0, y, 0));
                    if denom > 1e-12 {
                        let lhs = math::abs(u.value(0, s, 0) - u.value(0, y, 0));
                        worst = worst.max(lhs / denom);
                    }
                }
            }
            worst
        };
        let n_coarse = empirical_n(0.25);
        let n_fine = empirical_n(0.125);
        assert!(n_coarse > 0.0 && n_fine > 0.0);
        assert!(
            math::abs(n_fine - n_coarse) / n_coarse < 0.5,
            "empirical constant drifted: {n_coarse} -> {n_fine}"
        );
    }

    #[test]
    fn masked_interior_zeroes_wall_shell_only() {
        let g = GridSpec::new(1, 2.0, 0.5, 0.0, 0.5, 0.5).unwrap();
        let f = GridFunction::sample_scalar(&g, "one", |_, _| 1.0);
        let m = f.masked_interior(0.75);
        let mut x = [0.0];
        for s in 0..g.spatial_nodes() {
            g.coords_of(s, &mut x);
            let expect = if 2.0 - math::abs(x[0]) < 0.75 { 0.0 } else { 1.0 };
            assert_eq!(m.value(0, s, 0), expect);
        }
    }
}

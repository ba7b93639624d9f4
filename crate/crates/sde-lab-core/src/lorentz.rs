//! Lorentz norms computed exactly on step functions.
//!
//! Everything on a finite grid is a step function of its distribution, so
//! `||f||_{p,q} = p^{1/q} || t mu(|f| >= t)^{1/p} ||_{L^q(dt/t)}` reduces to
//! a closed sum over the decreasing rearrangement: with sorted distinct
//! values `v_1 > v_2 > ...` and cumulative measures `m_j`,
//!
//! ```text
//! ||f||_{p,q}^q = (p/q) * sum_j m_j^{q/p} (v_j^q - v_{j+1}^q)      (q finite)
//! ||f||_{p,inf} = max_j v_j m_j^{1/p}
//! ```
//!
//! No quadrature is involved; the only floating error is from `pow`.
//!
//! Mixed space-time norms take a plain `L^p` norm on each time slice and a
//! Lorentz `L^{q,r}` norm (`r` restricted to `1` or `inf`) of the resulting
//! time profile. Time cells are the half-open `(t_{j-1}, t_j]`, sampled at
//! their right endpoints; the initial node carries no measure. That makes
//! constant profiles and the `s^{-1/q'}` weak-norm family exact at any
//! resolution.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::math;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

/// Second (refinement) index of a Lorentz norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LorentzQ {
    Finite(f64),
    Infinity,
}

/// Outer refinement index of a mixed time norm; the laboratory only ever
/// needs the endpoints of the scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuterIndex {
    One,
    Infinity,
}

impl OuterIndex {
    fn as_lorentz_q(self) -> LorentzQ {
        match self {
            OuterIndex::One => LorentzQ::Finite(1.0),
            OuterIndex::Infinity => LorentzQ::Infinity,
        }
    }
}

/// Position on the `2/q + d/p` scale relative to the critical value 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticalityClass {
    Subcritical,
    Critical,
    Supercritical,
}

/// Exponent pair for mixed norms `L^{q,r}_t(L^p_x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzExponents {
    p: f64,
    q: f64,
    r: OuterIndex,
}

impl LorentzExponents {
    pub fn new(p: f64, q: f64, r: OuterIndex) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() || !(q > 1.0) || !q.is_finite() {
            return Err(Error::InvalidExponents(format!("need p, q in (1, inf), got ({p}, {q})")));
        }
        Ok(LorentzExponents { p, q, r })
    }

    /// The pair on the critical line `2/q + d/p = 1` with given `p`.
    /// Requires `p > d` so that `q` stays positive and finite.
    pub fn critical(dim: usize, p: f64) -> Result<Self> {
        let d = dim as f64;
        if !(p > d) {
            return Err(Error::InvalidExponents(format!(
                "critical pair needs p > d = {d}, got p = {p}"
            )));
        }
        let q = 2.0 / (1.0 - d / p);
        LorentzExponents::new(p, q, OuterIndex::One)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn r(&self) -> OuterIndex {
        self.r
    }

    pub fn with_r(&self, r: OuterIndex) -> Self {
        LorentzExponents { r, ..*self }
    }

    pub fn p_dual(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    pub fn q_dual(&self) -> f64 {
        self.q / (self.q - 1.0)
    }

    /// `2/q + d/p`; equals 1 exactly on the critical scale.
    pub fn criticality(&self, dim: usize) -> f64 {
        2.0 / self.q + dim as f64 / self.p
    }

    pub fn criticality_class(&self, dim: usize) -> CriticalityClass {
        let kappa = self.criticality(dim);
        if kappa < 1.0 - 1e-12 {
            CriticalityClass::Subcritical
        } else if kappa > 1.0 + 1e-12 {
            CriticalityClass::Supercritical
        } else {
            CriticalityClass::Critical
        }
    }

    /// Exponents seen by the squared field `b^2`: `(p/2, q/2)`, which doubles
    /// the criticality. Valid only when both halves stay above 1.
    pub fn halved(&self) -> Result<Self> {
        LorentzExponents::new(self.p / 2.0, self.q / 2.0, self.r)
    }
}

/// Decreasing rearrangement of a weighted sample set: strictly decreasing
/// positive values with cumulative measures.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    values: Vec<f64>,
    cum_measure: Vec<f64>,
}

/// Builds the decreasing rearrangement of `(value, weight)` samples.
/// Absolute values are taken, ties are merged, zeros are dropped (they
/// carry no Lorentz mass). Errors on empty input, nonpositive weights, or
/// non-finite values.
pub fn decreasing_rearrangement(samples: &[(f64, f64)]) -> Result<StepFunction> {
    if samples.is_empty() {
        return Err(Error::EmptyInput(String::from("rearrangement of an empty sample set")));
    }
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(samples.len());
    for &(v, w) in samples {
        if !v.is_finite() || !w.is_finite() {
            return Err(Error::EmptyInput(String::from("non-finite sample")));
        }
        if w <= 0.0 {
            return Err(Error::EmptyInput(String::from("nonpositive sample weight")));
        }
        let a = math::abs(v);
        if a > 0.0 {
            pairs.push((a, w));
        }
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut values = Vec::new();
    let mut cum = Vec::new();
    let mut running = 0.0;
    for (v, w) in pairs {
        running += w;
        if values.last() == Some(&v) {
            *cum.last_mut().unwrap() = running;
        } else {
            values.push(v);
            cum.push(running);
        }
    }
    Ok(StepFunction { values, cum_measure: cum })
}

impl StepFunction {
    pub fn is_null(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total_measure(&self) -> f64 {
        self.cum_measure.last().copied().unwrap_or(0.0)
    }

    pub fn steps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().copied().zip(self.cum_measure.iter().copied())
    }

    /// Exact Lorentz norm of the step function. `p` must be positive and
    /// finite; `q` ranges over `(0, inf]`.
    pub fn lorentz_norm(&self, p: f64, q: LorentzQ) -> Result<f64> {
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::InvalidExponents(format!("first index must be in (0, inf), got {p}")));
        }
        if self.is_null() {
            return Ok(0.0);
        }
        match q {
            LorentzQ::Infinity => {
                let mut best: f64 = 0.0;
                for (v, m) in self.steps() {
                    best = best.max(v * math::powf_pos(m, 1.0 / p));
                }
                Ok(best)
            }
            LorentzQ::Finite(q) => {
                if !(q > 0.0) {
                    return Err(Error::InvalidExponents(format!(
                        "second index must be positive, got {q}"
                    )));
                }
                let mut acc = 0.0;
                for (j, (v, m)) in self.steps().enumerate() {
                    let v_next = self.values.get(j + 1).copied().unwrap_or(0.0);
                    acc += math::powf_pos(m, q / p)
                        * (math::powf_pos(v, q) - math::powf_pos(v_next, q));
                }
                Ok(math::powf_pos(acc * p / q, 1.0 / q))
            }
        }
    }
}

/// Lorentz norm of weighted samples; convenience over the rearrangement.
pub fn lorentz_norm(samples: &[(f64, f64)], p: f64, q: LorentzQ) -> Result<f64> {
    decreasing_rearrangement(samples)?.lorentz_norm(p, q)
}

/// Plain `L^p` norm of one time slice with cell measure `h^d`.
pub fn spatial_lp_norm(f: &GridFunction, j: usize, p: f64) -> f64 {
    let g = f.grid();
    let vol = g.cell_volume();
    let mut acc = 0.0;
    for s in 0..g.spatial_nodes() {
        acc += math::powf_pos(f.magnitude(j, s), p);
    }
    math::powf_pos(acc * vol, 1.0 / p)
}

/// Lorentz norm of one time slice over the spatial cells.
pub fn spatial_lorentz_norm(f: &GridFunction, j: usize, p: f64, q: LorentzQ) -> Result<f64> {
    let g = f.grid();
    let vol = g.cell_volume();
    let samples: Vec<(f64, f64)> =
        (0..g.spatial_nodes()).map(|s| (f.magnitude(j, s), vol)).collect();
    lorentz_norm(&samples, p, q)
}

/// Mixed-norm evaluation record.
#[derive(Debug, Clone, PartialEq)]
pub struct NormReport {
    pub value: f64,
    pub exponents: LorentzExponents,
    pub window: (f64, f64),
    pub h: f64,
    pub tau: f64,
    /// Per-slice inner norms at the right endpoints of the window's cells.
    pub slice_norms: Vec<f64>,
    /// Values at successive grid refinements, coarsest first, when the
    /// caller ran a sweep; empty for a single evaluation.
    pub refinement: Vec<f64>,
}

impl NormReport {
    /// Largest relative gap between successive refinement values, or zero
    /// when fewer than two are recorded.
    pub fn refinement_drift(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for w in self.refinement.windows(2) {
            let denom = math::abs(w[1]).max(1e-300);
            worst = worst.max(math::abs(w[1] - w[0]) / denom);
        }
        worst
    }
}

/// Indices of the right-endpoint slices of the window `(start, end]`,
/// endpoints snapped to grid times.
fn window_slices(f: &GridFunction, window: (f64, f64)) -> Result<(usize, usize)> {
    let g = f.grid();
    if g.time_cells() == 0 {
        return Err(Error::IntervalOutOfRange { start: window.0, end: window.1 });
    }
    let snap = |t: f64| -> Result<usize> {
        let rel = (t - g.t0()) / g.tau();
        let j = math::round(rel);
        if math::abs(rel - j) > 1e-6 || j < -0.5 || j > g.time_cells() as f64 + 0.5 {
            return Err(Error::IntervalOutOfRange { start: window.0, end: window.1 });
        }
        Ok(j.max(0.0) as usize)
    };
    let j0 = snap(window.0)?;
    let j1 = snap(window.1)?;
    if j0 >= j1 {
        return Err(Error::IntervalOutOfRange { start: window.0, end: window.1 });
    }
    Ok((j0, j1))
}

/// Mixed norm `|| ||f(t, .)||_{L^p_x} ||_{L^{q,r}_t}` over the window.
pub fn mixed_lorentz_norm(
    f: &GridFunction,
    exps: &LorentzExponents,
    window: (f64, f64),
) -> Result<NormReport> {
    let g = f.grid();
    let (j0, j1) = window_slices(f, window)?;
    let mut slice_norms = Vec::with_capacity(j1 - j0);
    for j in (j0 + 1)..=j1 {
        slice_norms.push(spatial_lp_norm(f, j, exps.p()));
    }
    let samples: Vec<(f64, f64)> = slice_norms.iter().map(|&v| (v, g.tau())).collect();
    let profile = decreasing_rearrangement(&samples)?;
    let value = profile.lorentz_norm(exps.q(), exps.r().as_lorentz_q())?;
    Ok(NormReport {
        value,
        exponents: *exps,
        window: (g.time_at(j0), g.time_at(j1)),
        h: g.h(),
        tau: g.tau(),
        slice_norms,
        refinement: Vec::new(),
    })
}

/// Two-sided record of a Lorentz-Hölder comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct HolderReport {
    pub product_norm: f64,
    pub f_norm: f64,
    pub g_norm: f64,
    /// `product_norm / (f_norm * g_norm)`; finite-constant behavior means
    /// this stays bounded across fixtures.
    pub ratio: f64,
}

fn recip(q: LorentzQ) -> f64 {
    match q {
        LorentzQ::Finite(v) => 1.0 / v,
        LorentzQ::Infinity => 0.0,
    }
}

/// Hölder comparison on one time slice: `||fg||_{p,q}` against
/// `||f||_{p1,q1} ||g||_{p2,q2}` under `1/p = 1/p1 + 1/p2`,
/// `1/q = 1/q1 + 1/q2`. The product field is the pointwise product of
/// magnitudes. Errors when the exponent relations fail.
pub fn check_holder(
    f: &GridFunction,
    g: &GridFunction,
    j: usize,
    product_exps: (f64, LorentzQ),
    f_exps: (f64, LorentzQ),
    g_exps: (f64, LorentzQ),
) -> Result<HolderReport> {
    if f.grid() != g.grid() {
        return Err(Error::ShapeMismatch(String::from("Hölder factors on different grids")));
    }
    let scaling_gap = math::abs(1.0 / product_exps.0 - 1.0 / f_exps.0 - 1.0 / g_exps.0);
    let refinement_gap = math::abs(recip(product_exps.1) - recip(f_exps.1) - recip(g_exps.1));
    if scaling_gap > 1e-9 || refinement_gap > 1e-9 {
        return Err(Error::InvalidExponents(String::from(
            "Hölder exponents must satisfy 1/p = 1/p1 + 1/p2 and 1/q = 1/q1 + 1/q2",
        )));
    }
    let grid = f.grid();
    let vol = grid.cell_volume();
    let samples: Vec<(f64, f64)> = (0..grid.spatial_nodes())
        .map(|s| (f.magnitude(j, s) * g.magnitude(j, s), vol))
        .collect();
    let product_norm = lorentz_norm(&samples, product_exps.0, product_exps.1)?;
    let f_norm = spatial_lorentz_norm(f, j, f_exps.0, f_exps.1)?;
    let g_norm = spatial_lorentz_norm(g, j, g_exps.0, g_exps.1)?;
    let denom = f_norm * g_norm;
    let ratio = if denom > 0.0 { product_norm / denom } else { 0.0 };
    Ok(HolderReport { product_norm, f_norm, g_norm, ratio })
}

/// Record of the mixed-norm convolution bound.
#[derive(Debug, Clone, PartialEq)]
pub struct OneilReport {
    pub sup_convolution: f64,
    pub f_norm: f64,
    pub g_norm: f64,
    pub ratio: f64,
}

/// Sup-norm of the space-time convolution `f * g` against the product of
/// conjugate mixed norms: `||f*g||_inf <= C ||f||_{q1,1}(L^{p1})
/// ||g||_{q2,inf}(L^{p2})` with `1/p1 + 1/p2 = 1/q1 + 1/q2 = 1`.
///
/// Both fields are extended by zero, so the convolution is a finite sum
/// over the common lattice; the sup runs over all reachable output nodes.
/// Cost is quadratic in the node count; meant for small diagnostic grids.
pub fn check_oneil_mixed(
    f: &GridFunction,
    g: &GridFunction,
    f_exps: &LorentzExponents,
    g_exps: &LorentzExponents,
) -> Result<OneilReport> {
    let fg = f.grid();
    let gg = g.grid();
    if fg.dim() != gg.dim()
        || math::abs(fg.h() - gg.h()) > 1e-12
        || math::abs(fg.tau() - gg.tau()) > 1e-12
    {
        return Err(Error::ShapeMismatch(String::from(
            "convolution factors need matching steps",
        )));
    }
    if math::abs(1.0 / f_exps.p() + 1.0 / g_exps.p() - 1.0) > 1e-9
        || math::abs(1.0 / f_exps.q() + 1.0 / g_exps.q() - 1.0) > 1e-9
        || f_exps.r() == g_exps.r()
    {
        return Err(Error::InvalidExponents(String::from(
            "conjugate mixed exponents required: 1/p1 + 1/p2 = 1/q1 + 1/q2 = 1, r1 conjugate r2",
        )));
    }
    if f.ncomp() != 1 || g.ncomp() != 1 {
        return Err(Error::ShapeMismatch(String::from("convolution check is scalar-only")));
    }

    let d = fg.dim();
    let n_f = fg.axis_nodes() as isize;
    let n_g = gg.axis_nodes() as isize;
    let cell = fg.cell_volume() * fg.tau();
    let mut sup: f64 = 0.0;
    // Output lattice: time offsets j_f + j_g, spatial offsets i_f + i_g,
    // indexed relative to the two boxes' corners.
    let out_time = fg.time_nodes() + gg.time_nodes() - 1;
    let out_axis = (n_f + n_g - 1) as usize;
    let mut idx_f = [0usize; crate::grid::MAX_DIM];
    let mut out_idx = [0usize; crate::grid::MAX_DIM];
    for jt in 0..out_time {
        for so in 0..out_axis.pow(d as u32) {
            let mut rem = so;
            for k in (0..d).rev() {
                out_idx[k] = rem % out_axis;
                rem /= out_axis;
            }
            let mut acc = 0.0;
            for jf in 0..fg.time_nodes() {
                let jg = jt as isize - jf as isize;
                if jg < 0 || jg >= gg.time_nodes() as isize {
                    continue;
                }
                for sf in 0..fg.spatial_nodes() {
                    fg.axis_indices(sf, &mut idx_f[..d]);
                    let mut sg = 0usize;
                    let mut inside = true;
                    for k in 0..d {
                        let ig = out_idx[k] as isize - idx_f[k] as isize;
                        if ig < 0 || ig >= n_g {
                            inside = false;
                            break;
                        }
                        sg = sg * n_g as usize + ig as usize;
                    }
                    if !inside {
                        continue;
                    }
                    acc += f.value(jf, sf, 0) * g.value(jg as usize, sg, 0);
                }
            }
            sup = sup.max(math::abs(acc) * cell);
        }
    }

    let f_norm = mixed_lorentz_norm(f, f_exps, (fg.t0(), fg.t1()))?.value;
    let g_norm = mixed_lorentz_norm(g, g_exps, (gg.t0(), gg.t1()))?.value;
    let denom = f_norm * g_norm;
    let ratio = if denom > 0.0 { sup / denom } else { 0.0 };
    Ok(OneilReport { sup_convolution: sup, f_norm, g_norm, ratio })
}

/// Greedy partition of `window` into maximal subintervals on which the
/// mixed norm of `b` stays at or below `threshold`.
///
/// The search is greedy from the left with binary search on the interval
/// end; since interval norms are monotone in the endpoint and endpoints
/// live on the time lattice, the result is exact (resolution one cell) and
/// deterministic. Errors when a single cell already exceeds the threshold.
pub fn partition_time(
    b: &GridFunction,
    exps: &LorentzExponents,
    threshold: f64,
    window: (f64, f64),
) -> Result<Vec<(f64, f64)>> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidConfig(String::from("partition threshold must be positive")));
    }
    let g = b.grid();
    let (j_start, j_end) = window_slices(b, window)?;
    let norm_of = |a: usize, e: usize| -> Result<f64> {
        Ok(mixed_lorentz_norm(b, exps, (g.time_at(a), g.time_at(e)))?.value)
    };
    let mut parts = Vec::new();
    let mut a = j_start;
    while a < j_end {
        let first = norm_of(a, a + 1)?;
        if first > threshold {
            return Err(Error::NotPartitionable { threshold, cell_norm: first });
        }
        // Largest e in (a, j_end] with norm(a, e) <= threshold.
        let (mut lo, mut hi) = (a + 1, j_end);
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if norm_of(a, mid)? <= threshold {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        parts.push((g.time_at(a), g.time_at(lo)));
        a = lo;
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridFunction, GridSpec};
    use alloc::vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Closed form for the indicator `c * 1_A`: `(p/q)^{1/q} c |A|^{1/p}`.
    fn indicator_norm(p: f64, q: f64, c: f64, measure: f64) -> f64 {
        math::powf(p / q, 1.0 / q) * c * math::powf(measure, 1.0 / p)
    }

    #[test]
    fn indicator_oracle_p2_q1_unit_set_gives_two() {
        let samples = vec![(1.0, 0.25); 4]; // c = 1 on a set of measure 1
        let norm = lorentz_norm(&samples, 2.0, LorentzQ::Finite(1.0)).unwrap();
        assert_relative_eq!(norm, 2.0, max_relative = 1e-12);
        assert_relative_eq!(indicator_norm(2.0, 1.0, 1.0, 1.0), 2.0, max_relative = 1e-15);
    }

    #[test]
    fn weak_norm_is_sup_of_level_products() {
        // Two-step function: value 3 on measure 1, value 1 on further measure 8.
        let samples = vec![(3.0, 1.0), (1.0, 8.0)];
        let norm = lorentz_norm(&samples, 2.0, LorentzQ::Infinity).unwrap();
        // Levels: 3 * 1^{1/2} = 3 and 1 * 9^{1/2} = 3.
        assert_relative_eq!(norm, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn rearrangement_merges_ties_and_drops_zeros() {
        let f = decreasing_rearrangement(&[(2.0, 0.5), (-2.0, 0.5), (0.0, 3.0), (1.0, 1.0)])
            .unwrap();
        let steps: Vec<(f64, f64)> = f.steps().collect();
        assert_eq!(steps, vec![(2.0, 1.0), (1.0, 2.0)]);
        assert!(decreasing_rearrangement(&[]).is_err());
        assert!(decreasing_rearrangement(&[(1.0, 0.0)]).is_err());
        assert!(decreasing_rearrangement(&[(f64::NAN, 1.0)]).is_err());
    }

    proptest! {
        #[test]
        fn indicator_matches_closed_form(
            p in 1.1f64..8.0, q in 0.5f64..6.0, c in 0.1f64..10.0, m in 0.01f64..50.0,
        ) {
            let samples = [(c, m)];
            let norm = lorentz_norm(&samples, p, LorentzQ::Finite(q)).unwrap();
            let want = indicator_norm(p, q, c, m);
            prop_assert!((norm - want).abs() <= 1e-9 * want);
        }

        #[test]
        fn diagonal_norm_recovers_lp(
            p in 1.0f64..6.0,
            vals in proptest::collection::vec((0.01f64..30.0, 0.01f64..2.0), 1..40),
        ) {
            let norm = lorentz_norm(&vals, p, LorentzQ::Finite(p)).unwrap();
            let lp: f64 = vals.iter().map(|&(v, w)| w * math::powf(v, p)).sum();
            let lp = math::powf(lp, 1.0 / p);
            prop_assert!((norm - lp).abs() <= 1e-9 * lp.max(1e-12));
        }

        #[test]
        fn norm_is_homogeneous_and_permutation_invariant(
            scale in 0.01f64..20.0,
            vals in proptest::collection::vec((0.0f64..10.0, 0.01f64..2.0), 2..30),
        ) {
            prop_assume!(vals.iter().any(|&(v, _)| v > 0.0));
            let base = lorentz_norm(&vals, 2.5, LorentzQ::Finite(1.5)).unwrap();
            let scaled: Vec<(f64, f64)> = vals.iter().map(|&(v, w)| (scale * v, w)).collect();
            let scaled_norm = lorentz_norm(&scaled, 2.5, LorentzQ::Finite(1.5)).unwrap();
            prop_assert!((scaled_norm - scale * base).abs() <= 1e-9 * scaled_norm.max(1e-12));

            let mut reversed = vals.clone();
            reversed.reverse();
            let rev_norm = lorentz_norm(&reversed, 2.5, LorentzQ::Finite(1.5)).unwrap();
            prop_assert!((rev_norm - base).abs() <= 1e-12 * base.max(1e-12));
        }

        /// The quasi-triangle inequality with the derived constant bound 2:
        /// scaling the distribution inequality gives
        /// `||f+g|| <= 2(||f|| + ||g||)` for p, q >= 1.
        #[test]
        fn quasi_triangle_constant_at_most_two(
            pairs in proptest::collection::vec(
                (0.0f64..10.0, 0.0f64..10.0, 0.01f64..2.0), 2..30),
            p in 1.0f64..5.0, q in 1.0f64..5.0,
        ) {
            prop_assume!(pairs.iter().any(|&(a, b, _)| a + b > 0.0));
            let f: Vec<(f64, f64)> = pairs.iter().map(|&(a, _, w)| (a, w)).collect();
            let g: Vec<(f64, f64)> = pairs.iter().map(|&(_, b, w)| (b, w)).collect();
            let sum: Vec<(f64, f64)> = pairs.iter().map(|&(a, b, w)| (a + b, w)).collect();
            let nf = lorentz_norm(&f, p, LorentzQ::Finite(q)).unwrap();
            let ng = lorentz_norm(&g, p, LorentzQ::Finite(q)).unwrap();
            let ns = lorentz_norm(&sum, p, LorentzQ::Finite(q)).unwrap();
            prop_assert!(ns <= 2.0 * (nf + ng) * (1.0 + 1e-9));
        }

        /// Disjoint supports: the merged norm is squeezed between the max
        /// and the quasi-triangle bound.
        #[test]
        fn disjoint_support_comparability(
            f_vals in proptest::collection::vec((0.1f64..10.0, 0.01f64..2.0), 1..15),
            g_vals in proptest::collection::vec((0.1f64..10.0, 0.01f64..2.0), 1..15),
        ) {
            let nf = lorentz_norm(&f_vals, 3.0, LorentzQ::Finite(1.0)).unwrap();
            let ng = lorentz_norm(&g_vals, 3.0, LorentzQ::Finite(1.0)).unwrap();
            let mut merged = f_vals.clone();
            merged.extend_from_slice(&g_vals);
            let nm = lorentz_norm(&merged, 3.0, LorentzQ::Finite(1.0)).unwrap();
            prop_assert!(nm >= nf.max(ng) * (1.0 - 1e-9));
            prop_assert!(nm <= 2.0 * (nf + ng) * (1.0 + 1e-9));
        }
    }

    #[test]
    fn criticality_scale_classifies_and_squares() {
        // 2/4 + 2/4 = 1: critical in d = 2.
        let e = LorentzExponents::new(4.0, 4.0, OuterIndex::One).unwrap();
        assert_eq!(e.criticality_class(2), CriticalityClass::Critical);
        assert_eq!(e.criticality_class(1), CriticalityClass::Subcritical);
        assert_eq!(e.criticality_class(3), CriticalityClass::Supercritical);
        let sq = e.halved().unwrap();
        assert_relative_eq!(sq.criticality(2), 2.0, max_relative = 1e-12);
        // Halving needs p, q > 2.
        assert!(LorentzExponents::new(1.5, 4.0, OuterIndex::One).unwrap().halved().is_err());
        // Constructor helper lands exactly on the critical line.
        let c = LorentzExponents::critical(3, 6.0).unwrap();
        assert_relative_eq!(c.criticality(3), 1.0, max_relative = 1e-14);
        assert!(LorentzExponents::critical(3, 2.0).is_err());
    }

    fn time_profile_grid(t1: f64, tau: f64) -> GridSpec {
        GridSpec::new(1, 2.0, 1.0, 0.0, t1, tau).unwrap()
    }

    /// Indicator of a single node whose cell volume is exactly 1, so the
    /// slice norm is exactly 1 for every p.
    fn unit_slice_profile(g: &GridSpec) -> GridFunction {
        GridFunction::sample_scalar(g, "profile", |_, x| if x[0] == 0.0 { 1.0 } else { 0.0 })
    }

    #[test]
    fn constant_time_profile_oracle_q4() {
        // || 1_{[0, tau*]} ||_{L^{4,1}_t} = 4 * (tau*)^{1/4} with unit slice norms.
        for &(t1, tau) in &[(0.5, 0.0625), (1.0, 0.125), (2.0, 0.25)] {
            let g = time_profile_grid(t1, tau);
            let f = unit_slice_profile(&g);
            // p is irrelevant for a {0,1}-valued single-node slice; use 2.
            let exps = LorentzExponents::new(2.0, 4.0, OuterIndex::One).unwrap();
            let report = mixed_lorentz_norm(&f, &exps, (0.0, t1)).unwrap();
            let want = 4.0 * math::powf(t1, 0.25);
            assert_relative_eq!(report.value, want, max_relative = 1e-12);
        }
    }

    /// `|| s^{-1/q'} ||_{L^{q',inf}([0,T])} = 1` for every horizon: with
    /// right-endpoint cells each level satisfies `v_j m_j^{1/q'} = 1`
    /// exactly, so the discrete value is 1 to rounding.
    #[test]
    fn weak_norm_of_dual_power_profile_is_one() {
        for &q_dual in &[4.0 / 3.0, 2.0, 4.0] {
            for &t1 in &[0.5, 1.0, 2.0] {
                let tau = t1 / 64.0;
                let g = time_profile_grid(t1, tau);
                let f = GridFunction::sample_scalar(&g, "spike", |t, x| {
                    if x[0] == 0.0 && t > 0.0 {
                        math::powf(t, -1.0 / q_dual)
                    } else {
                        0.0
                    }
                });
                let exps = LorentzExponents::new(2.0, q_dual, OuterIndex::Infinity).unwrap();
                let report = mixed_lorentz_norm(&f, &exps, (0.0, t1)).unwrap();
                assert!(
                    math::abs(report.value - 1.0) < 1e-6,
                    "q' = {q_dual}, T = {t1}: got {}",
                    report.value
                );
            }
        }
    }

    #[test]
    fn partition_oracle_sixteen_equal_intervals() {
        // Constant unit profile, q = 4, threshold 2: interval length obeys
        // 4 * len^{1/4} <= 2, i.e. len <= 1/16, so [0,1] splits into 16.
        let g = time_profile_grid(1.0, 1.0 / 32.0);
        let f = unit_slice_profile(&g);
        let exps = LorentzExponents::new(2.0, 4.0, OuterIndex::One).unwrap();
        let parts = partition_time(&f, &exps, 2.0, (0.0, 1.0)).unwrap();
        assert_eq!(parts.len(), 16);
        for (k, &(a, b)) in parts.iter().enumerate() {
            assert_relative_eq!(a, k as f64 / 16.0, epsilon = 1e-12);
            assert_relative_eq!(b, (k + 1) as f64 / 16.0, epsilon = 1e-12);
            let norm = mixed_lorentz_norm(&f, &exps, (a, b)).unwrap().value;
            assert!(norm <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn partition_rejects_oversized_single_cell() {
        let g = time_profile_grid(1.0, 0.25);
        let f = unit_slice_profile(&g);
        let exps = LorentzExponents::new(2.0, 4.0, OuterIndex::One).unwrap();
        // One cell of length 1/4 has norm 4 * (1/4)^{1/4} ~ 2.83 > 1.
        let err = partition_time(&f, &exps, 1.0, (0.0, 1.0));
        assert!(matches!(err, Err(Error::NotPartitionable { .. })));
    }

    #[test]
    fn holder_accepts_conjugate_exponents_and_rejects_bad_ones() {
        let g = GridSpec::new(1, 2.0, 0.25, 0.0, 0.25, 0.25).unwrap();
        let f = GridFunction::sample_scalar(&g, "f", |_, x| math::exp(-x[0] * x[0]));
        let w = GridFunction::sample_scalar(&g, "g", |_, x| 1.0 / (1.0 + x[0] * x[0]));
        let report = check_holder(
            &f,
            &w,
            0,
            (1.0, LorentzQ::Finite(1.0)),
            (2.0, LorentzQ::Finite(2.0)),
            (2.0, LorentzQ::Finite(2.0)),
        )
        .unwrap();
        // L^{1,1} = L^1 and Cauchy-Schwarz: the ratio is at most 1 here.
        assert!(report.ratio > 0.0 && report.ratio <= 1.0 + 1e-12);
        assert!(check_holder(
            &f,
            &w,
            0,
            (1.0, LorentzQ::Finite(1.0)),
            (2.0, LorentzQ::Finite(2.0)),
            (3.0, LorentzQ::Finite(2.0)),
        )
        .is_err());
    }

    #[test]
    fn oneil_bound_holds_on_gaussian_fixture() {
        let g = GridSpec::new(1, 2.0, 0.25, 0.0, 1.0, 0.25).unwrap();
        let f = GridFunction::sample_scalar(&g, "f", |t, x| {
            math::exp(-(t - 0.5) * (t - 0.5) / 0.08) * math::exp(-x[0] * x[0])
        });
        let w = GridFunction::sample_scalar(&g, "g", |t, x| {
            math::exp(-(t - 0.5) * (t - 0.5) / 0.18) * math::exp(-2.0 * x[0] * x[0])
        });
        let f_exps = LorentzExponents::new(2.0, 2.0, OuterIndex::One).unwrap();
        let g_exps = LorentzExponents::new(2.0, 2.0, OuterIndex::Infinity).unwrap();
        let report = check_oneil_mixed(&f, &w, &f_exps, &g_exps).unwrap();
        assert!(report.sup_convolution > 0.0);
        // O'Neil constant for these exponents is moderate; the discrete
        // ratio must stay of order one.
        assert!(report.ratio < 4.0, "ratio {}", report.ratio);
        // Conjugacy violations are rejected.
        let bad = LorentzExponents::new(3.0, 2.0, OuterIndex::Infinity).unwrap();
        assert!(check_oneil_mixed(&f, &w, &f_exps, &bad).is_err());
    }
}

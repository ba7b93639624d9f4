//! The drift-removing transform `Phi(t, x) = x + u(t, x)` built from a
//! solved Kolmogorov equation, its Newton inverse, and the conjugated
//! diffusion coefficient `sigma~(t, y) = I + grad u(t, Phi^{-1}(t, y))`.
//!
//! Admissibility is `sup |grad u| <= 1/2` in the Hilbert-Schmidt norm; the
//! diffeomorphism certificates are spectral: every Jacobian
//! `I + grad u` keeps its singular values inside `[1/2, 2]`, which pins the
//! inverse Jacobians to the same window.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::kolmogorov::PdeSolution;
use crate::linalg;
use crate::math;
use crate::rng::PathStream;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonParams {
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for NewtonParams {
    fn default() -> Self {
        NewtonParams { tol: 1e-10, max_steps: 50 }
    }
}

/// Diffeomorphism certificate: worst margins over all grid nodes and a
/// seeded sample of off-lattice points.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffeoReport {
    /// Smallest Jacobian singular value anywhere on the grid.
    pub sigma_min: f64,
    /// Largest Jacobian singular value anywhere on the grid.
    pub sigma_max: f64,
    /// `sigma_min - 1/2`; negative means the window is violated.
    pub margin_low: f64,
    /// `2 - sigma_max`.
    pub margin_high: f64,
    /// Worst slack of `|Phi(t,x)| >= |x| - sup|u|` on the boundary shell.
    pub properness_slack: f64,
    /// Worst `|Phi(t, Phi^{-1}(t,y)) - y|` over the sampled points.
    pub roundtrip_worst: f64,
    /// Worst entrywise gap between the difference quotient of the inverse
    /// map and `[grad Phi(t, Phi^{-1}(t,y))]^{-1}` over the sampled points.
    pub inverse_jacobian_dev: f64,
    pub passed: bool,
}

/// `Phi = id + u` with cached Jacobians and inversion parameters.
#[derive(Debug, Clone)]
pub struct FlowMap {
    solution: PdeSolution,
    phi: GridFunction,
    jacobian: GridFunction,
    newton: NewtonParams,
    sup_u: f64,
    sup_grad_u: f64,
    certificate: DiffeoReport,
}

fn assemble(solution: PdeSolution, newton: NewtonParams) -> FlowMap {
    let g = solution.u().grid().clone();
    let d = g.dim();
    let mut phi = solution.u().clone();
    let mut x = [0.0; 3];
    let nsp = g.spatial_nodes();
    for s in 0..nsp {
        g.coords_of(s, &mut x[..d]);
        for j in 0..g.time_nodes() {
            for c in 0..d {
                let v = phi.value(j, s, c);
                phi.set(j, s, c, v + x[c]);
            }
        }
    }
    let mut jacobian = solution.gradient().clone();
    for j in 0..g.time_nodes() {
        for s in 0..nsp {
            for c in 0..d {
                let v = jacobian.value(j, s, c * d + c);
                jacobian.set(j, s, c * d + c, v + 1.0);
            }
        }
    }
    let sup_u = solution.u().sup_magnitude();
    let sup_grad_u = solution.gradient().sup_magnitude();
    let mut map = FlowMap {
        solution,
        phi,
        jacobian,
        newton,
        sup_u,
        sup_grad_u,
        certificate: DiffeoReport {
            sigma_min: 0.0,
            sigma_max: 0.0,
            margin_low: 0.0,
            margin_high: 0.0,
            properness_slack: 0.0,
            roundtrip_worst: 0.0,
            inverse_jacobian_dev: 0.0,
            passed: false,
        },
    };
    map.certificate = check_diffeo(&map);
    map
}

/// Builds the transform from an admissible solution: `sup |grad u| <= 1/2`.
pub fn build_transform(solution: PdeSolution) -> Result<FlowMap> {
    build_transform_with(solution, NewtonParams::default())
}

pub fn build_transform_with(solution: PdeSolution, newton: NewtonParams) -> Result<FlowMap> {
    let sup = solution.gradient().sup_magnitude();
    if sup > 0.5 {
        return Err(Error::GradientTooLarge { sup, bound: 0.5 });
    }
    Ok(assemble(solution, newton))
}

impl FlowMap {
    /// Skips the admissibility bound so certificate failures can be
    /// exhibited; every query still goes through the same machinery.
    pub fn unchecked(solution: PdeSolution, newton: NewtonParams) -> FlowMap {
        assemble(solution, newton)
    }

    pub fn solution(&self) -> &PdeSolution {
        &self.solution
    }

    pub fn phi(&self) -> &GridFunction {
        &self.phi
    }

    pub fn jacobian(&self) -> &GridFunction {
        &self.jacobian
    }

    pub fn interval(&self) -> (f64, f64) {
        self.solution.interval()
    }

    pub fn newton(&self) -> NewtonParams {
        self.newton
    }

    pub fn sup_gradient(&self) -> f64 {
        self.sup_grad_u
    }

    pub fn certificate(&self) -> &DiffeoReport {
        &self.certificate
    }

    /// Largest coordinate a query point may have: the image box shrunk by
    /// `sup |u|` and one interpolation cell.
    pub fn trusted_reach(&self) -> f64 {
        self.solution.u().grid().extent() - self.sup_u - self.solution.u().grid().h()
    }
}

/// Solves `Phi(t, x) = y` by Newton iteration from `x0 = y`, interpolating
/// `Phi` and its Jacobian off-lattice.
pub fn invert_transform(map: &FlowMap, t: f64, y: &[f64]) -> Result<Vec<f64>> {
    let g = map.phi.grid();
    let d = g.dim();
    if y.len() != d {
        return Err(Error::ShapeMismatch(String::from("query dimension differs from the map")));
    }
    let reach = map.trusted_reach();
    if y.iter().any(|&c| math::abs(c) > reach) {
        return Err(Error::OutOfDomain(String::from(
            "query outside the shrunken image box of the transform",
        )));
    }
    let mut x = y.to_vec();
    let mut fx = vec![0.0; d];
    let mut jac = vec![0.0; d * d];
    let mut jinv = vec![0.0; d * d];
    let mut step = vec![0.0; d];
    let mut residual = f64::INFINITY;
    for _ in 0..map.newton.max_steps {
        map.phi.interp(t, &x, &mut fx);
        for (c, f) in fx.iter_mut().enumerate() {
            *f -= y[c];
        }
        residual = math::norm2(&fx);
        if residual < map.newton.tol {
            return Ok(x);
        }
        map.jacobian.interp(t, &x, &mut jac);
        linalg::invert(&jac, d, &mut jinv)?;
        linalg::mat_vec(&jinv, &fx, &mut step);
        for (c, s) in step.iter().enumerate() {
            x[c] -= s;
        }
    }
    // The loop leaves the last residual; accept a final on-tolerance state.
    map.phi.interp(t, &x, &mut fx);
    for (c, f) in fx.iter_mut().enumerate() {
        *f -= y[c];
    }
    residual = residual.min(math::norm2(&fx));
    if residual < map.newton.tol {
        Ok(x)
    } else {
        Err(Error::InversionFailed { residual })
    }
}

/// `sigma~(t, y) = I + grad u(t, Phi^{-1}(t, y))`, row-major `d x d`.
pub fn conjugated_sigma(map: &FlowMap, t: f64, y: &[f64]) -> Result<Vec<f64>> {
    let d = map.phi.grid().dim();
    let x = invert_transform(map, t, y)?;
    let mut sigma = vec![0.0; d * d];
    map.jacobian.interp(t, &x, &mut sigma);
    Ok(sigma)
}

/// Recomputes the diffeomorphism certificate: spectral window, properness
/// on the boundary shell, and inverse identities at seeded sample points.
pub fn check_diffeo(map: &FlowMap) -> DiffeoReport {
    let g = map.phi.grid().clone();
    let d = g.dim();
    let nsp = g.spatial_nodes();

    let mut sigma_min = f64::INFINITY;
    let mut sigma_max: f64 = 0.0;
    let mut block = vec![0.0; d * d];
    for j in 0..g.time_nodes() {
        for s in 0..nsp {
            for (c, b) in block.iter_mut().enumerate() {
                *b = map.jacobian.value(j, s, c);
            }
            let sv = linalg::singular_values(&block, d);
            sigma_max = sigma_max.max(sv[0]);
            sigma_min = sigma_min.min(sv[d - 1]);
        }
    }

    // Properness proxy on the outermost node layer.
    let mut x = [0.0; 3];
    let mut fx = vec![0.0; d];
    let mut properness_slack = f64::INFINITY;
    for s in 0..nsp {
        g.coords_of(s, &mut x[..d]);
        let wall = x[..d]
            .iter()
            .map(|&c| g.extent() - math::abs(c))
            .fold(f64::INFINITY, f64::min);
        if wall > 0.5 * g.h() {
            continue;
        }
        for j in 0..g.time_nodes() {
            for (c, f) in fx.iter_mut().enumerate() {
                *f = map.phi.value(j, s, c);
            }
            let slack = math::norm2(&fx) - (math::norm2(&x[..d]) - map.sup_u);
            properness_slack = properness_slack.min(slack);
        }
    }

    // Inverse round trips and the inverse-Jacobian identity at seeded
    // points, on a handful of time slices.
    let mut roundtrip_worst: f64 = 0.0;
    let mut inverse_jacobian_dev: f64 = 0.0;
    let reach = map.trusted_reach();
    let fd = 0.5 * g.h();
    if reach > fd {
        let mut stream = PathStream::new(0xd1f3_0c47, 1);
        let mut jac = vec![0.0; d * d];
        let mut jinv = vec![0.0; d * d];
        let slices = [0usize, g.time_cells() / 2, g.time_cells()];
        for &j in &slices {
            let t = g.time_at(j);
            for _ in 0..40 {
                let mut y = vec![0.0; d];
                for c in y.iter_mut() {
                    *c = (2.0 * stream.next_uniform() - 1.0) * (reach - fd);
                }
                let x0 = match invert_transform(map, t, &y) {
                    Ok(x0) => x0,
                    Err(_) => {
                        roundtrip_worst = f64::INFINITY;
                        continue;
                    }
                };
                map.phi.interp(t, &x0, &mut fx);
                let mut err2 = 0.0;
                for c in 0..d {
                    err2 += (fx[c] - y[c]) * (fx[c] - y[c]);
                }
                roundtrip_worst = roundtrip_worst.max(math::sqrt(err2));

                map.jacobian.interp(t, &x0, &mut jac);
                if linalg::invert(&jac, d, &mut jinv).is_err() {
                    inverse_jacobian_dev = f64::INFINITY;
                    continue;
                }
                for a in 0..d {
                    let mut yp = y.clone();
                    let mut ym = y.clone();
                    yp[a] += fd;
                    ym[a] -= fd;
                    let (xp, xm) = match (
                        invert_transform(map, t, &yp),
                        invert_transform(map, t, &ym),
                    ) {
                        (Ok(xp), Ok(xm)) => (xp, xm),
                        _ => {
                            inverse_jacobian_dev = f64::INFINITY;
                            continue;
                        }
                    };
                    for c in 0..d {
                        let quotient = (xp[c] - xm[c]) / (2.0 * fd);
                        let dev = math::abs(quotient - jinv[c * d + a]);
                        inverse_jacobian_dev = inverse_jacobian_dev.max(dev);
                    }
                }
            }
        }
    }

    let margin_low = sigma_min - 0.5;
    let margin_high = 2.0 - sigma_max;
    let passed = margin_low >= 0.0
        && margin_high >= 0.0
        && properness_slack >= -1e-12
        && roundtrip_worst <= 10.0 * map.newton.tol
        && inverse_jacobian_dev <= 0.02;
    DiffeoReport {
        sigma_min,
        sigma_max,
        margin_low,
        margin_high,
        properness_slack,
        roundtrip_worst,
        inverse_jacobian_dev,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::kolmogorov::TimeBoundary;
    use crate::lorentz::{LorentzExponents, OuterIndex};

    fn exps_2d() -> LorentzExponents {
        LorentzExponents::new(4.0, 4.0, OuterIndex::One).unwrap()
    }

    fn grid_2d() -> GridSpec {
        GridSpec::new(2, 2.0, 0.125, 0.0, 0.125, 0.015625).unwrap()
    }

    fn solution_from(
        g: &GridSpec,
        rule: impl Fn(f64, &[f64], &mut [f64]),
    ) -> PdeSolution {
        let u = GridFunction::sample_vector(g, "fixture", rule);
        PdeSolution::from_field(u, &exps_2d(), TimeBoundary::BackwardZeroEnd).unwrap()
    }

    #[test]
    fn identity_map_inverts_in_zero_steps() {
        let g = grid_2d();
        let sol = solution_from(&g, |_, _, out| out.fill(0.0));
        let map = build_transform(sol).unwrap();
        let y = [0.4, -0.7];
        let x = invert_transform(&map, 0.0625, &y).unwrap();
        assert_eq!(x, y.to_vec());
        let sigma = conjugated_sigma(&map, 0.0625, &y).unwrap();
        assert_eq!(sigma, linalg::identity(2));
        let report = map.certificate();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.sigma_min, 1.0);
        assert_eq!(report.sigma_max, 1.0);
    }

    #[test]
    fn affine_map_inverts_in_one_step() {
        let g = grid_2d();
        let beta = [0.15, -0.1];
        let sol = solution_from(&g, |t, _, out| {
            out[0] = beta[0] * (0.125 - t);
            out[1] = beta[1] * (0.125 - t);
        });
        let map = build_transform(sol).unwrap();
        let t = 0.0625;
        let y = [0.3, 0.2];
        let x = invert_transform(&map, t, &y).unwrap();
        for c in 0..2 {
            let want = y[c] - beta[c] * (0.125 - t);
            assert!(math::abs(x[c] - want) < 1e-9, "component {c}: {} vs {want}", x[c]);
        }
        let sigma = conjugated_sigma(&map, t, &y).unwrap();
        for (i, v) in sigma.iter().enumerate() {
            let want = if i % 3 == 0 { 1.0 } else { 0.0 };
            assert!(math::abs(v - want) < 1e-12);
        }
    }

    fn bump_solution(g: &GridSpec, scale: f64) -> PdeSolution {
        solution_from(g, move |t, x, out| {
            let envelope = (0.125 - t) / 0.125;
            let shape = math::exp(-math::norm2_sq(x));
            out[0] = scale * envelope * shape * math::sin(x[0] + 0.3);
            out[1] = scale * 0.8 * envelope * shape * math::cos(x[1]);
        })
    }

    #[test]
    fn admissible_bump_passes_certificates_and_round_trips() {
        let g = grid_2d();
        let sol = bump_solution(&g, 0.25);
        let sup = sol.gradient().sup_magnitude();
        assert!(sup > 0.2 && sup <= 0.5, "fixture gradient {sup}");
        let map = build_transform(sol).unwrap();
        let report = map.certificate();
        assert!(report.passed, "{report:?}");
        assert!(report.sigma_min >= 0.5);
        assert!(report.sigma_max <= 2.0);

        let mut stream = PathStream::new(7, 7);
        let reach = map.trusted_reach() - 0.1;
        let mut fx = [0.0; 2];
        let mut worst: f64 = 0.0;
        for k in 0..1000 {
            let t = 0.125 * stream.next_uniform();
            let y = [
                (2.0 * stream.next_uniform() - 1.0) * reach,
                (2.0 * stream.next_uniform() - 1.0) * reach,
            ];
            let x = invert_transform(&map, t, &y)
                .unwrap_or_else(|e| panic!("inversion {k} failed: {e}"));
            map.phi().interp(t, &x, &mut fx);
            let err = math::sqrt(
                (fx[0] - y[0]) * (fx[0] - y[0]) + (fx[1] - y[1]) * (fx[1] - y[1]),
            );
            worst = worst.max(err);
        }
        assert!(worst < 1e-9, "worst round trip {worst}");
    }

    #[test]
    fn conjugated_sigma_matches_the_lattice_jacobian() {
        let g = grid_2d();
        let sol = bump_solution(&g, 0.2);
        let map = build_transform(sol).unwrap();
        let j = 4;
        let t = g.time_at(j);
        let node = g.flat_index(&[12, 19]);
        let mut x = [0.0; 2];
        g.coords_of(node, &mut x);
        let mut y = [0.0; 2];
        for c in 0..2 {
            y[c] = map.phi().value(j, node, c);
        }
        let sigma = conjugated_sigma(&map, t, &y).unwrap();
        for c in 0..4 {
            let want = map.jacobian().value(j, node, c);
            assert!(
                math::abs(sigma[c] - want) < 1e-6,
                "entry {c}: {} vs {want}",
                sigma[c]
            );
        }
    }

    #[test]
    fn oversized_gradient_is_rejected_and_flagged() {
        let g = grid_2d();
        let sol = bump_solution(&g, 1.6);
        let sup = sol.gradient().sup_magnitude();
        assert!(sup > 1.0, "fixture gradient {sup}");
        match build_transform(sol.clone()) {
            Err(Error::GradientTooLarge { sup: s, bound }) => {
                assert_eq!(bound, 0.5);
                assert!(s > 1.0);
            }
            other => panic!("expected GradientTooLarge, got {other:?}"),
        }
        let map = FlowMap::unchecked(sol, NewtonParams::default());
        let report = map.certificate();
        assert!(!report.passed);
        assert!(report.margin_low < 0.0, "{report:?}");
    }
}

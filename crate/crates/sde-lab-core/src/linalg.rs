//! Dense helpers for the tiny matrices this crate meets (`d <= 3`).
//!
//! Matrices are flat row-major slices of length `d*d`. Everything is
//! closed-form (adjugate inverses, trigonometric symmetric eigenvalues), so
//! results are deterministic with no iteration-count dependence.

use crate::error::{Error, Result};
use crate::math;
use alloc::vec;
use alloc::vec::Vec;

/// `out = a * x` for a `d x d` matrix and `d`-vector.
#[inline]
pub fn mat_vec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    debug_assert_eq!(a.len(), d * d);
    debug_assert_eq!(out.len(), d);
    for i in 0..d {
        let mut s = 0.0;
        for j in 0..d {
            s += a[i * d + j] * x[j];
        }
        out[i] = s;
    }
}

/// `out = a * b` for `d x d` matrices.
#[inline]
pub fn mat_mul(a: &[f64], b: &[f64], out: &mut [f64], d: usize) {
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += a[i * d + k] * b[k * d + j];
            }
            out[i * d + j] = s;
        }
    }
}

pub fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

/// Hilbert-Schmidt (Frobenius) norm; the pointwise matrix magnitude used
/// throughout the norm layer. Note `|I| = sqrt(d)` under this convention.
#[inline]
pub fn hs_norm(a: &[f64]) -> f64 {
    math::norm2(a)
}

pub fn det(a: &[f64], d: usize) -> f64 {
    match d {
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        3 => {
            a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
                + a[2] * (a[3] * a[7] - a[4] * a[6])
        }
        _ => unreachable!("grid dimension is validated to be 1..=3"),
    }
}

/// Adjugate inverse. Errors when `|det|` is below `1e-14`.
pub fn invert(a: &[f64], d: usize, out: &mut [f64]) -> Result<()> {
    let dt = det(a, d);
    if math::abs(dt) < 1e-14 {
        return Err(Error::InversionFailed { residual: math::abs(dt) });
    }
    let inv = 1.0 / dt;
    match d {
        1 => out[0] = inv,
        2 => {
            out[0] = a[3] * inv;
            out[1] = -a[1] * inv;
            out[2] = -a[2] * inv;
            out[3] = a[0] * inv;
        }
        3 => {
            out[0] = (a[4] * a[8] - a[5] * a[7]) * inv;
            out[1] = (a[2] * a[7] - a[1] * a[8]) * inv;
            out[2] = (a[1] * a[5] - a[2] * a[4]) * inv;
            out[3] = (a[5] * a[6] - a[3] * a[8]) * inv;
            out[4] = (a[0] * a[8] - a[2] * a[6]) * inv;
            out[5] = (a[2] * a[3] - a[0] * a[5]) * inv;
            out[6] = (a[3] * a[7] - a[4] * a[6]) * inv;
            out[7] = (a[1] * a[6] - a[0] * a[7]) * inv;
            out[8] = (a[0] * a[4] - a[1] * a[3]) * inv;
        }
        _ => unreachable!("grid dimension is validated to be 1..=3"),
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix, descending. Closed form for all
/// supported sizes; the 3x3 case uses the trigonometric solution of the
/// characteristic cubic.
pub fn sym_eigenvalues(a: &[f64], d: usize) -> Vec<f64> {
    match d {
        1 => vec![a[0]],
        2 => {
            let tr = a[0] + a[3];
            let dt = a[0] * a[3] - a[1] * a[2];
            let disc = math::sqrt((tr * tr / 4.0 - dt).max(0.0));
            vec![tr / 2.0 + disc, tr / 2.0 - disc]
        }
        3 => {
            let p1 = a[1] * a[1] + a[2] * a[2] + a[5] * a[5];
            let q = (a[0] + a[4] + a[8]) / 3.0;
            if p1 == 0.0 {
                let mut eigs = vec![a[0], a[4], a[8]];
                eigs.sort_by(|x, y| y.partial_cmp(x).unwrap());
                return eigs;
            }
            let p2 = (a[0] - q) * (a[0] - q)
                + (a[4] - q) * (a[4] - q)
                + (a[8] - q) * (a[8] - q)
                + 2.0 * p1;
            let p = math::sqrt(p2 / 6.0);
            let mut b = [0.0; 9];
            for i in 0..9 {
                b[i] = a[i] / p;
            }
            b[0] -= q / p;
            b[4] -= q / p;
            b[8] -= q / p;
            let r = (det(&b, 3) / 2.0).clamp(-1.0, 1.0);
            let phi = math::acos(r) / 3.0;
            let e1 = q + 2.0 * p * math::cos(phi);
            let e3 = q + 2.0 * p * math::cos(phi + 2.0 * math::PI / 3.0);
            vec![e1, 3.0 * q - e1 - e3, e3]
        }
        _ => unreachable!("grid dimension is validated to be 1..=3"),
    }
}

/// Singular values of a `d x d` matrix, descending.
pub fn singular_values(a: &[f64], d: usize) -> Vec<f64> {
    let mut ata = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += a[k * d + i] * a[k * d + j];
            }
            ata[i * d + j] = s;
        }
    }
    sym_eigenvalues(&ata, d)
        .into_iter()
        .map(|e| math::sqrt(e.max(0.0)))
        .collect()
}

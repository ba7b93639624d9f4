//! Float math routed through `libm`.
//!
//! `no_std` has no `exp`/`ln`/`powf` on `f64`, and `libm` has the further
//! property of producing identical bits on every platform, which the
//! reproducibility contract of the Monte Carlo layer relies on. All crate
//! code calls these wrappers instead of the `std` methods.

pub use core::f64::consts::PI;

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

#[inline]
pub fn acos(x: f64) -> f64 {
    libm::acos(x)
}

/// Euclidean length of a short coordinate slice.
#[inline]
pub fn norm2(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for &v in x {
        s += v * v;
    }
    sqrt(s)
}

/// Squared Euclidean length.
#[inline]
pub fn norm2_sq(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for &v in x {
        s += v * v;
    }
    s
}

/// `x^y` for positive `x` with the exact special cases the norm code needs:
/// `0^y = 0` for `y > 0`, and `x^1 = x` / `x^0.5 = sqrt(x)` taken on the
/// fast, correctly rounded paths.
#[inline]
pub fn powf_pos(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if y == 1.0 {
        return x;
    }
    if y == 2.0 {
        return x * x;
    }
    if y == 0.5 {
        return sqrt(x);
    }
    libm::pow(x, y)
}

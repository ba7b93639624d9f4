//! Numerical laboratory for stochastic differential equations whose drifts
//! sit at the edge of the classical well-posedness scale.
//!
//! The crate provides the building blocks the companion `sde-lab` binary
//! wires into experiments:
//!
//! * [`grid`]: space-time lattices on `[-L, L]^d x [t0, t1]`, sampled fields,
//!   mollification, finite differences, lattice maximal functions;
//! * [`lorentz`]: exact Lorentz norms of step functions, mixed space-time
//!   norms, Hölder/O'Neil checks, time-interval partitioning;
//! * [`heat`]: discrete heat semigroup, Duhamel source solver, Gaussian and
//!   kernel-gradient norm formulas;
//! * [`kolmogorov`]: fixed-point solver for backward Kolmogorov equations
//!   with drift-coupled source terms, with contraction self-calibration;
//! * [`zvonkin`]: the drift-removing change of variables `Phi = x + u`,
//!   Newton inversion, and diffeomorphism certificates;
//! * [`sde`]: counter-based Brownian ensembles, Euler-Maruyama, Girsanov
//!   reweighting, Khasminskii-type exponential functionals, and the
//!   inverse-radial counterexample probe;
//! * [`flow`]: composed stochastic flows, mollification-stability sweeps,
//!   and weak-derivative moment estimates.
//!
//! Everything here is `no_std` + `alloc`; float math routes through `libm`
//! so results are bit-identical across platforms. IO, file formats, and the
//! CLI live in the companion crate.

#![no_std]
#![forbid(unsafe_code)]
// Negated comparisons like `!(x > 0.0)` are load-bearing: they treat NaN as
// a failure, which `x <= 0.0` would silently accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// The numeric kernels index several same-length buffers per iteration;
// iterator zips would obscure the stencil arithmetic.
#![allow(clippy::needless_range_loop)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod flow;
pub mod grid;
pub mod heat;
pub mod kolmogorov;
pub mod linalg;
pub mod lorentz;
pub mod math;
pub mod rng;
pub mod sde;
pub mod zvonkin;

pub use error::{Error, Result};

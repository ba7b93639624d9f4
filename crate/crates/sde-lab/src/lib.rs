//! Experiment runner for the singular-drift SDE laboratory.
//!
//! The core crate carries the numerics; this crate turns a TOML config
//! into reports on disk. The pipeline is `config -> recipe -> tables ->
//! files + manifest`, with the invariant that every output byte is a pure
//! function of `(config, seed)`: the thread count changes scheduling only,
//! never content, and `lab verify` holds past runs to exactly that
//! standard.

// Negated comparisons like `!(x > 0.0)` are load-bearing: they treat NaN as
// a failure, which `x <= 0.0` would silently accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// The table builders index several same-length columns per iteration.
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod ensemble_io;
pub mod grid_io;
pub mod manifest;
pub mod mapper;
pub mod recipes;
pub mod runner;
pub mod table;

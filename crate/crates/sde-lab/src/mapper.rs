//! Thread dispatch for path ensembles.
//!
//! `LAB_THREADS` is the only environment variable the binary reads: `1`
//! selects the serial mapper, any larger value a rayon pool of that many
//! threads, unset the default pool. Everything downstream of the mapper
//! reduces serially in path order, so the choice changes wall time only;
//! reports are byte-identical either way.

use std::env;

use anyhow::{Context, Result};
use rayon::iter::{IntoParallelIterator, ParallelIterator};
use sde_lab_core::sde::{PathMapper, SerialMapper};

/// Order-preserving parallel fan-out over path indices.
pub struct RayonMapper {
    pool: Option<rayon::ThreadPool>,
}

impl RayonMapper {
    /// Uses the process-global rayon pool.
    pub fn new() -> RayonMapper {
        RayonMapper { pool: None }
    }

    /// Uses a dedicated pool of `threads` workers.
    pub fn with_threads(threads: usize) -> Result<RayonMapper> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .context("building the rayon pool")?;
        Ok(RayonMapper { pool: Some(pool) })
    }
}

impl Default for RayonMapper {
    fn default() -> Self {
        RayonMapper::new()
    }
}

impl PathMapper for RayonMapper {
    fn map_paths<T: Send, F: Fn(usize) -> T + Sync>(&self, n: usize, f: F) -> Vec<T> {
        // Indexed parallel collect keeps outputs in path order.
        let run = || (0..n).into_par_iter().map(&f).collect();
        match &self.pool {
            Some(pool) => pool.install(run),
            None => run(),
        }
    }
}

/// The mapper a run actually uses; picked once at startup.
pub enum AnyMapper {
    Serial(SerialMapper),
    Rayon(RayonMapper),
}

impl AnyMapper {
    pub fn serial() -> AnyMapper {
        AnyMapper::Serial(SerialMapper)
    }

    pub fn parallel() -> AnyMapper {
        AnyMapper::Rayon(RayonMapper::new())
    }

    pub fn label(&self) -> &'static str {
        match self {
            AnyMapper::Serial(_) => "serial",
            AnyMapper::Rayon(_) => "parallel",
        }
    }
}

impl PathMapper for AnyMapper {
    fn map_paths<T: Send, F: Fn(usize) -> T + Sync>(&self, n: usize, f: F) -> Vec<T> {
        match self {
            AnyMapper::Serial(m) => m.map_paths(n, f),
            AnyMapper::Rayon(m) => m.map_paths(n, f),
        }
    }
}

/// Reads `LAB_THREADS` and builds the corresponding mapper.
pub fn mapper_from_env() -> Result<AnyMapper> {
    match env::var("LAB_THREADS") {
        Err(_) => Ok(AnyMapper::parallel()),
        Ok(raw) if raw.trim().is_empty() => Ok(AnyMapper::parallel()),
        Ok(raw) => {
            let threads: usize = raw
                .trim()
                .parse()
                .with_context(|| format!("LAB_THREADS must be a positive integer, got {raw:?}"))?;
            if threads <= 1 {
                Ok(AnyMapper::serial())
            } else {
                Ok(AnyMapper::Rayon(RayonMapper::with_threads(threads)?))
            }
        }
    }
}

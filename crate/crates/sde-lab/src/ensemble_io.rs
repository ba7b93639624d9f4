//! Columnar persistence for path ensembles.
//!
//! An ensemble stores only its terminal slice: whole paths regenerate
//! from `(seed, path index)`, so the file keeps the header needed to
//! replay them (path count, step, window, dimension, seed, kind) plus the
//! terminal states laid out one column per component, the divergence
//! flags, and the log-weights when the ensemble carries any. All numbers
//! are little-endian; the writer is deterministic byte for byte.

use anyhow::{anyhow, bail, Result};

use sde_lab_core::sde::{EnsembleKind, PathEnsemble};

use crate::table::{Cell, Table};

const MAGIC: &[u8; 8] = b"SDELABE1";

fn kind_tag(kind: EnsembleKind) -> u8 {
    match kind {
        EnsembleKind::Brownian => 0,
        EnsembleKind::Drifted => 1,
        EnsembleKind::Conjugated => 2,
    }
}

pub fn kind_name(kind: EnsembleKind) -> &'static str {
    match kind {
        EnsembleKind::Brownian => "brownian",
        EnsembleKind::Drifted => "drifted",
        EnsembleKind::Conjugated => "conjugated",
    }
}

pub fn write_ensemble(paths: &PathEnsemble) -> Vec<u8> {
    let cfg = paths.config();
    let n = cfg.n;
    let dim = paths.dim();
    let weighted = paths.is_weighted();
    let mut out = Vec::with_capacity(64 + n * (dim + 1) * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&cfg.dt.to_le_bytes());
    out.extend_from_slice(&cfg.t0.to_le_bytes());
    out.extend_from_slice(&cfg.t1.to_le_bytes());
    out.extend_from_slice(&(dim as u64).to_le_bytes());
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    out.push(kind_tag(paths.kind()));
    out.push(weighted as u8);
    for c in 0..dim {
        for i in 0..n {
            out.extend_from_slice(&paths.final_state(i)[c].to_le_bytes());
        }
    }
    for i in 0..n {
        out.push(paths.is_flagged(i) as u8);
    }
    if let Some(logw) = paths.log_weights() {
        for w in logw {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    out
}

/// Decoded ensemble file. Terminal states stay columnar:
/// `columns[c][i]` is component `c` of path `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleFile {
    pub n: usize,
    pub dt: f64,
    pub t0: f64,
    pub t1: f64,
    pub dim: usize,
    pub seed: u64,
    pub kind: u8,
    pub columns: Vec<Vec<f64>>,
    pub flags: Vec<bool>,
    pub log_weights: Option<Vec<f64>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.at + len > self.bytes.len() {
            bail!("ensemble file truncated at byte {}", self.at);
        }
        let slice = &self.bytes[self.at..self.at + len];
        self.at += len;
        Ok(slice)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn read_ensemble(bytes: &[u8]) -> Result<EnsembleFile> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8)? != MAGIC {
        bail!("not an ensemble file");
    }
    let n = usize::try_from(r.u64()?).map_err(|_| anyhow!("path count overflows usize"))?;
    let dt = r.f64()?;
    let t0 = r.f64()?;
    let t1 = r.f64()?;
    let dim = usize::try_from(r.u64()?).map_err(|_| anyhow!("dimension overflows usize"))?;
    let seed = r.u64()?;
    let kind = r.u8()?;
    if kind > 2 {
        bail!("unknown ensemble kind tag {kind}");
    }
    let weighted = match r.u8()? {
        0 => false,
        1 => true,
        other => bail!("bad weight flag {other}"),
    };
    if dim == 0 || dim > 3 {
        bail!("ensemble dimension {dim} outside 1..=3");
    }
    let mut columns = Vec::with_capacity(dim);
    for _ in 0..dim {
        let mut col = Vec::with_capacity(n);
        for _ in 0..n {
            col.push(r.f64()?);
        }
        columns.push(col);
    }
    let mut flags = Vec::with_capacity(n);
    for _ in 0..n {
        flags.push(r.u8()? != 0);
    }
    let log_weights = if weighted {
        let mut w = Vec::with_capacity(n);
        for _ in 0..n {
            w.push(r.f64()?);
        }
        Some(w)
    } else {
        None
    };
    if r.at != bytes.len() {
        bail!("{} trailing bytes after ensemble payload", bytes.len() - r.at);
    }
    Ok(EnsembleFile { n, dt, t0, t1, dim, seed, kind, columns, flags, log_weights })
}

/// One-row summary table of an ensemble; what a `summary` retention run
/// stores instead of the binary.
pub fn summary_table(paths: &PathEnsemble) -> Table {
    let cfg = paths.config();
    let mut t = Table::new(
        "ensemble",
        &["kind", "n", "steps", "dt", "t0", "t1", "dim", "seed", "flagged", "mean_weight", "weight_se", "capped"],
    );
    let (mean_weight, weight_se, capped) = match paths.weight_diagnostics() {
        Some(w) => (Cell::Float(w.mean_weight), Cell::Float(w.weight_se), Cell::from(w.capped)),
        None => (Cell::Null, Cell::Null, Cell::Null),
    };
    t.push_row(vec![
        Cell::from(kind_name(paths.kind())),
        Cell::from(cfg.n),
        Cell::from(cfg.steps()),
        Cell::Float(cfg.dt),
        Cell::Float(cfg.t0),
        Cell::Float(cfg.t1),
        Cell::from(paths.dim()),
        Cell::Int(cfg.seed as i64),
        Cell::from(paths.flagged_count()),
        mean_weight,
        weight_se,
        capped,
    ]);
    t
}

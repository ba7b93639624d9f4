//! CSV persistence for grid fields.
//!
//! The layout is self-describing: two comment lines carry the lattice
//! (dimension, extent, steps, window) and the field (rank, label), then
//! one line per node in `[time][space]` order with the node's component
//! block. Floats print in shortest round-trip form, so write followed by
//! read reproduces the field bit for bit.

use anyhow::{anyhow, bail, Context, Result};

use sde_lab_core::grid::{GridFunction, GridSpec, Rank};

use crate::table::fmt_float;

pub fn write_grid_function(f: &GridFunction) -> String {
    let g = f.grid();
    let mut out = String::new();
    out.push_str(&format!(
        "# grid dim={} extent={} h={} t0={} t1={} tau={}\n",
        g.dim(),
        fmt_float(g.extent()),
        fmt_float(g.h()),
        fmt_float(g.t0()),
        fmt_float(g.t1()),
        fmt_float(g.tau()),
    ));
    out.push_str(&format!("# field rank={} label={}\n", f.rank().name(), f.label()));
    let ncomp = f.ncomp();
    for j in 0..g.time_nodes() {
        for s in 0..g.spatial_nodes() {
            for c in 0..ncomp {
                if c > 0 {
                    out.push(',');
                }
                out.push_str(&fmt_float(f.value(j, s, c)));
            }
            out.push('\n');
        }
    }
    out
}

fn header_value<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    let tag = format!("{key}=");
    let start = line
        .find(&tag)
        .ok_or_else(|| anyhow!("grid header is missing `{key}`"))?
        + tag.len();
    let rest = &line[start..];
    Ok(rest.split_whitespace().next().unwrap_or(""))
}

fn parse_rank(name: &str) -> Result<Rank> {
    Ok(match name {
        "scalar" => Rank::Scalar,
        "vector" => Rank::Vector,
        "matrix" => Rank::Matrix,
        "tensor3" => Rank::Tensor3,
        other => bail!("unknown field rank {other:?}"),
    })
}

pub fn read_grid_function(text: &str) -> Result<GridFunction> {
    let mut lines = text.lines();
    let grid_line = lines.next().ok_or_else(|| anyhow!("empty grid file"))?;
    let field_line = lines.next().ok_or_else(|| anyhow!("grid file is missing its field header"))?;
    if !grid_line.starts_with("# grid") || !field_line.starts_with("# field") {
        bail!("not a grid field file");
    }
    let dim: usize = header_value(grid_line, "dim")?.parse().context("dim")?;
    let extent: f64 = header_value(grid_line, "extent")?.parse().context("extent")?;
    let h: f64 = header_value(grid_line, "h")?.parse().context("h")?;
    let t0: f64 = header_value(grid_line, "t0")?.parse().context("t0")?;
    let t1: f64 = header_value(grid_line, "t1")?.parse().context("t1")?;
    let tau: f64 = header_value(grid_line, "tau")?.parse().context("tau")?;
    let rank = parse_rank(header_value(field_line, "rank")?)?;
    let label_at = field_line
        .find("label=")
        .ok_or_else(|| anyhow!("field header is missing `label`"))?
        + "label=".len();
    let label = &field_line[label_at..];

    let grid = GridSpec::new(dim, extent, h, t0, t1, tau).map_err(|e| anyhow!("grid header: {e}"))?;
    let ncomp = rank.components(dim);
    let nodes = grid.time_nodes() * grid.spatial_nodes();
    let mut values = Vec::with_capacity(nodes * ncomp);
    for (k, line) in lines.enumerate() {
        let mut found = 0;
        for cell in line.split(',') {
            values.push(cell.trim().parse::<f64>().with_context(|| format!("node line {k}"))?);
            found += 1;
        }
        if found != ncomp {
            bail!("node line {k} has {found} components, expected {ncomp}");
        }
    }
    if values.len() != nodes * ncomp {
        bail!("expected {} node lines, found {}", nodes, values.len() / ncomp.max(1));
    }
    GridFunction::from_values(&grid, rank, values, label).map_err(|e| anyhow!("grid values: {e}"))
}

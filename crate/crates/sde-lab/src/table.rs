//! Long-format report tables with a pinned column order.
//!
//! Every experiment emits its numbers as [`Table`] values: a name, an
//! ordered column list, and rows of typed cells. The JSON rendering is an
//! object `{name, columns, rows}` whose rows are arrays, so field order is
//! carried by the `columns` list and never depends on a map
//! implementation; the CSV rendering is the same content as header plus
//! rows. Sweeps put their abscissa (epsilon, h, dt, refinement level) in
//! the first column, one row per point, so the files plot directly.
//!
//! Encoding is deterministic byte for byte: floats print in the shortest
//! form that parses back to the same bits, strings are always quoted in
//! CSV, and non-finite floats print as the strings `inf`, `-inf`, `nan`
//! in both formats. Because strings are the only quoted cells, decoding
//! is unambiguous and the two formats round-trip to equal content.

use anyhow::{anyhow, bail, Context, Result};

/// One typed cell of a report table.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Cell {
        Cell::Float(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Cell {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Cell {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Cell {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Cell {
        Cell::Str(String::from(v))
    }
}

impl Cell {
    /// Content equality with floats compared by bit pattern, so tables
    /// containing `nan` still compare equal to their round-trips.
    pub fn content_eq(&self, other: &Cell) -> bool {
        match (self, other) {
            (Cell::Float(a), Cell::Float(b)) => a.to_bits() == b.to_bits(),
            _ => self == other,
        }
    }
}

/// A named table of rows; the unit every report file stores.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Table {
        Table {
            name: String::from(name),
            columns: columns.iter().map(|c| String::from(*c)).collect(),
            rows: Vec::new(),
        }
    }

    /// Appends a row; the width must match the header.
    pub fn push_row(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width differs from header");
        self.rows.push(row);
    }

    pub fn content_eq(&self, other: &Table) -> bool {
        self.name == other.name
            && self.columns == other.columns
            && self.rows.len() == other.rows.len()
            && self
                .rows
                .iter()
                .zip(&other.rows)
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.content_eq(y)))
    }

    /// Deterministic JSON rendering, one row per line.
    pub fn to_json(&self) -> String {
        let mut out = String::new();
        out.push_str("{\n");
        out.push_str(&format!("  \"name\": {},\n", json_string(&self.name)));
        out.push_str("  \"columns\": [");
        for (i, c) in self.columns.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push_str(&json_string(c));
        }
        out.push_str("],\n");
        if self.rows.is_empty() {
            out.push_str("  \"rows\": []\n");
        } else {
            out.push_str("  \"rows\": [\n");
            for (i, row) in self.rows.iter().enumerate() {
                out.push_str("    [");
                for (k, cell) in row.iter().enumerate() {
                    if k > 0 {
                        out.push_str(", ");
                    }
                    out.push_str(&json_cell(cell));
                }
                out.push(']');
                if i + 1 < self.rows.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            out.push_str("  ]\n");
        }
        out.push_str("}\n");
        out
    }

    /// Deterministic CSV rendering: header line, then one line per row.
    /// An empty sweep is exactly the header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.columns.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&csv_quote(c));
        }
        out.push('\n');
        for row in &self.rows {
            for (k, cell) in row.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push_str(&csv_cell(cell));
            }
            out.push('\n');
        }
        out
    }

    pub fn render(&self, format: crate::config::OutputFormat) -> String {
        match format {
            crate::config::OutputFormat::Json => self.to_json(),
            crate::config::OutputFormat::Csv => self.to_csv(),
        }
    }

    pub fn from_json(text: &str) -> Result<Table> {
        let v: serde_json::Value = serde_json::from_str(text).context("parsing table JSON")?;
        let obj = v.as_object().ok_or_else(|| anyhow!("table JSON must be an object"))?;
        let name = obj
            .get("name")
            .and_then(|n| n.as_str())
            .ok_or_else(|| anyhow!("table JSON needs a string `name`"))?;
        let columns: Vec<String> = obj
            .get("columns")
            .and_then(|c| c.as_array())
            .ok_or_else(|| anyhow!("table JSON needs a `columns` array"))?
            .iter()
            .map(|c| c.as_str().map(String::from).ok_or_else(|| anyhow!("column names are strings")))
            .collect::<Result<_>>()?;
        let mut rows = Vec::new();
        for row in obj
            .get("rows")
            .and_then(|r| r.as_array())
            .ok_or_else(|| anyhow!("table JSON needs a `rows` array"))?
        {
            let cells = row.as_array().ok_or_else(|| anyhow!("rows are arrays"))?;
            if cells.len() != columns.len() {
                bail!("row width {} differs from header width {}", cells.len(), columns.len());
            }
            rows.push(cells.iter().map(cell_from_json).collect::<Result<_>>()?);
        }
        Ok(Table { name: String::from(name), columns, rows })
    }

    /// Decodes CSV produced by [`Table::to_csv`]. The name is not stored
    /// in the file, so the caller supplies it (usually the file stem).
    pub fn from_csv(name: &str, text: &str) -> Result<Table> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| anyhow!("CSV table is missing its header"))?;
        let columns = split_csv_line(header)?
            .into_iter()
            .map(|c| match c {
                RawCell::Quoted(s) => Ok(s),
                RawCell::Bare(s) => Ok(s),
            })
            .collect::<Result<Vec<String>>>()?;
        let mut rows = Vec::new();
        for line in lines {
            let raw = split_csv_line(line)?;
            if raw.len() != columns.len() {
                bail!("row width {} differs from header width {}", raw.len(), columns.len());
            }
            rows.push(raw.into_iter().map(cell_from_raw).collect::<Result<_>>()?);
        }
        Ok(Table { name: String::from(name), columns, rows })
    }
}

/// Shortest representation that parses back to the same f64; non-finite
/// values use fixed spellings shared by both formats.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        String::from("nan")
    } else if x == f64::INFINITY {
        String::from("inf")
    } else if x == f64::NEG_INFINITY {
        String::from("-inf")
    } else {
        format!("{x:?}")
    }
}

fn json_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn json_cell(cell: &Cell) -> String {
    match cell {
        Cell::Null => String::from("null"),
        Cell::Bool(b) => String::from(if *b { "true" } else { "false" }),
        Cell::Int(i) => format!("{i}"),
        Cell::Float(x) if x.is_finite() => fmt_float(*x),
        Cell::Float(x) => json_string(&fmt_float(*x)),
        Cell::Str(s) => json_string(s),
    }
}

fn cell_from_json(v: &serde_json::Value) -> Result<Cell> {
    Ok(match v {
        serde_json::Value::Null => Cell::Null,
        serde_json::Value::Bool(b) => Cell::Bool(*b),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Cell::Int(i)
            } else {
                Cell::Float(n.as_f64().ok_or_else(|| anyhow!("number out of f64 range"))?)
            }
        }
        serde_json::Value::String(s) => match special_float(s) {
            Some(x) => Cell::Float(x),
            None => Cell::Str(s.clone()),
        },
        other => bail!("unsupported cell value {other}"),
    })
}

fn special_float(s: &str) -> Option<f64> {
    match s {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        "nan" => Some(f64::NAN),
        _ => None,
    }
}

/// Strings are always quoted so that every bare cell decodes to a typed
/// value; quotes inside strings double as usual.
fn csv_quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        if ch == '"' {
            out.push('"');
        }
        out.push(ch);
    }
    out.push('"');
    out
}

fn csv_cell(cell: &Cell) -> String {
    match cell {
        Cell::Null => String::new(),
        Cell::Bool(b) => String::from(if *b { "true" } else { "false" }),
        Cell::Int(i) => format!("{i}"),
        Cell::Float(x) => fmt_float(*x),
        Cell::Str(s) => csv_quote(s),
    }
}

enum RawCell {
    Quoted(String),
    Bare(String),
}

fn split_csv_line(line: &str) -> Result<Vec<RawCell>> {
    let mut cells = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        match chars.peek() {
            Some('"') => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some('"') => {
                            if chars.peek() == Some(&'"') {
                                chars.next();
                                s.push('"');
                            } else {
                                break;
                            }
                        }
                        Some(c) => s.push(c),
                        None => bail!("unterminated quote in CSV line"),
                    }
                }
                cells.push(RawCell::Quoted(s));
                match chars.next() {
                    Some(',') => continue,
                    None => break,
                    Some(c) => bail!("unexpected character {c:?} after closing quote"),
                }
            }
            _ => {
                let mut s = String::new();
                let mut ended = true;
                for c in chars.by_ref() {
                    if c == ',' {
                        ended = false;
                        break;
                    }
                    s.push(c);
                }
                cells.push(RawCell::Bare(s));
                if ended {
                    break;
                }
            }
        }
    }
    Ok(cells)
}

fn cell_from_raw(raw: RawCell) -> Result<Cell> {
    Ok(match raw {
        RawCell::Quoted(s) => Cell::Str(s),
        RawCell::Bare(s) => {
            if s.is_empty() {
                Cell::Null
            } else if s == "true" {
                Cell::Bool(true)
            } else if s == "false" {
                Cell::Bool(false)
            } else if let Some(x) = special_float(&s) {
                Cell::Float(x)
            } else if s.bytes().all(|b| b.is_ascii_digit() || b == b'-') {
                Cell::Int(s.parse::<i64>().with_context(|| format!("integer cell {s:?}"))?)
            } else {
                Cell::Float(s.parse::<f64>().with_context(|| format!("float cell {s:?}"))?)
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::OutputFormat;

    fn sample() -> Table {
        let mut t = Table::new("levels", &["epsilon", "value", "n_used", "heavy_tail", "note"]);
        t.push_row(vec![
            Cell::Float(0.25),
            // 17 significant digits: a value serde_json only parses back
            // bit-exactly with its float_roundtrip feature enabled.
            Cell::Float(1.1025553037764821),
            Cell::Int(400),
            Cell::Bool(false),
            Cell::Str(String::from("coarse, \"raw\"")),
        ]);
        t.push_row(vec![
            Cell::Float(0.125),
            Cell::Float(f64::INFINITY),
            Cell::Int(400),
            Cell::Bool(true),
            Cell::Null,
        ]);
        t
    }

    #[test]
    fn json_round_trip_preserves_content() {
        let t = sample();
        let back = Table::from_json(&t.to_json()).unwrap();
        assert!(t.content_eq(&back));
    }

    #[test]
    fn csv_round_trip_preserves_content() {
        let t = sample();
        let back = Table::from_csv("levels", &t.to_csv()).unwrap();
        assert!(t.content_eq(&back));
    }

    #[test]
    fn json_and_csv_carry_identical_content() {
        let t = sample();
        let a = Table::from_json(&t.to_json()).unwrap();
        let b = Table::from_csv("levels", &t.to_csv()).unwrap();
        assert!(a.content_eq(&b));
    }

    #[test]
    fn empty_sweep_renders_header_only() {
        let t = Table::new("sweep", &["h", "estimate"]);
        assert_eq!(t.to_csv(), "\"h\",\"estimate\"\n");
        let back = Table::from_csv("sweep", &t.to_csv()).unwrap();
        assert!(back.rows.is_empty());
        assert!(t.to_json().contains("\"rows\": []"));
    }

    #[test]
    fn rendering_is_reproducible() {
        let t = sample();
        assert_eq!(t.render(OutputFormat::Json), t.render(OutputFormat::Json));
        assert_eq!(t.render(OutputFormat::Csv), t.render(OutputFormat::Csv));
    }

    #[test]
    fn floats_print_shortest_round_trip_form() {
        assert_eq!(fmt_float(1.0), "1.0");
        assert_eq!(fmt_float(0.1), "0.1");
        assert_eq!(fmt_float(f64::INFINITY), "inf");
        let x = 0.1 + 0.2;
        assert_eq!(fmt_float(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }
}

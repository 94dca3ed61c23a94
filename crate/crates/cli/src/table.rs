//! CSV exchange of marginals, trajectories and plan supports.
//!
//! Every file has a header row; reals are written with 17 significant digits
//! so that a write/read cycle reproduces each `f64` exactly.

use std::path::Path;

use crate::error::{CliError, Result};

/// `v` in scientific notation with 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn output_error(path: &Path, e: impl Into<std::io::Error>) -> CliError {
    CliError::Output { path: path.to_path_buf(), source: e.into() }
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

/// Writes `header` followed by `rows`.
pub fn write_rows(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| output_error(path, csv_io(e)))?;
    w.write_record(header).map_err(|e| output_error(path, csv_io(e)))?;
    for row in rows {
        w.write_record(&row).map_err(|e| output_error(path, csv_io(e)))?;
    }
    w.flush().map_err(|e| output_error(path, e))
}

/// Reads a headed CSV of reals, returning the header and the rows.
pub fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let bad = |msg: String| CliError::config(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let row = record
            .iter()
            .map(|field| {
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("row {}: `{field}` is not a number", line + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn coordinate_header(dim: usize) -> Vec<String> {
    if dim == 1 {
        vec!["x".to_owned()]
    } else {
        (1..=dim).map(|d| format!("x{d}")).collect()
    }
}

/// Columns `(x, value)`, or `(x1, …, xd, value)` for points in `d > 1` dimensions.
pub fn write_marginal(path: &Path, points: &[Vec<f64>], values: &[f64]) -> Result<()> {
    let dim = points.first().map_or(1, Vec::len);
    let mut header = coordinate_header(dim);
    header.push("value".into());
    let rows = points.iter().zip(values).map(|(p, v)| {
        p.iter().copied().chain([*v]).map(format_real).collect()
    });
    write_rows(path, &header, rows)
}

/// Inverse of [`write_marginal`]: point coordinates and values.
pub fn read_marginal(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let (header, rows) = read_rows(path)?;
    if header.last().map(String::as_str) != Some("value") || header.len() < 2 {
        return Err(CliError::config(format!(
            "{}: expected coordinate columns followed by `value`",
            path.display()
        )));
    }
    let mut points = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    for row in rows {
        if row.len() != header.len() {
            return Err(CliError::config(format!("{}: ragged row", path.display())));
        }
        let (v, p) = row.split_last().expect("nonempty row");
        points.push(p.to_vec());
        values.push(*v);
    }
    Ok((points, values))
}

/// Columns `(t, x, value)`, one block of rows per time step.
pub fn write_trajectory(path: &Path, points: &[Vec<f64>], densities: &[Vec<f64>]) -> Result<()> {
    let dim = points.first().map_or(1, Vec::len);
    let mut header = vec!["t".to_owned()];
    header.extend(coordinate_header(dim));
    header.push("value".into());
    let rows = densities.iter().enumerate().flat_map(|(t, d)| {
        points.iter().zip(d).map(move |(p, v)| {
            std::iter::once(t.to_string())
                .chain(p.iter().map(|c| format_real(*c)))
                .chain([format_real(*v)])
                .collect()
        })
    });
    write_rows(path, &header, rows)
}

/// Inverse of [`write_trajectory`]: one density per time step.
pub fn read_trajectory(path: &Path) -> Result<Vec<Vec<f64>>> {
    let (header, rows) = read_rows(path)?;
    if header.first().map(String::as_str) != Some("t") || header.last().map(String::as_str) != Some("value") {
        return Err(CliError::config(format!("{}: expected columns t, x…, value", path.display())));
    }
    let mut out: Vec<Vec<f64>> = Vec::new();
    for row in rows {
        let t = row[0] as usize;
        if t == out.len() {
            out.push(Vec::new());
        } else if t + 1 != out.len() {
            return Err(CliError::config(format!("{}: time steps out of order", path.display())));
        }
        out[t].push(*row.last().expect("nonempty row"));
    }
    Ok(out)
}

/// Plan entries as `(i, j, value)`.
pub fn write_support(path: &Path, entries: &[(usize, usize, f64)]) -> Result<()> {
    let header = ["i", "j", "value"].map(String::from);
    let rows = entries.iter().map(|&(i, j, v)| vec![i.to_string(), j.to_string(), format_real(v)]);
    write_rows(path, &header, rows)
}

/// `(index, value)` series such as gap histories.
pub fn write_series(path: &Path, name: &str, values: &[f64]) -> Result<()> {
    let header = ["index".to_owned(), name.to_owned()];
    let rows = values.iter().enumerate().map(|(i, v)| vec![i.to_string(), format_real(*v)]);
    write_rows(path, &header, rows)
}

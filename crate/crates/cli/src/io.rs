//! Headerless numeric CSV files: covariance (N×N) and signal (N×1).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crisp_alloc::core_types::{CovarianceMatrix, Signal};

/// Reads a headerless CSV of numbers, reporting the first problem as
/// `path:line:column: message`.
pub fn read_numeric(path: &Path) -> Result<Vec<Vec<f64>>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| format!("{}: {e}", path.display()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(rec.len());
        for (j, field) in rec.iter().enumerate() {
            let x: f64 = field.trim().parse().map_err(|_| {
                format!("{}:{line}:{}: not a number: '{field}'", path.display(), j + 1)
            })?;
            if !x.is_finite() {
                return Err(format!("{}:{line}:{}: non-finite value '{field}'", path.display(), j + 1));
            }
            row.push(x);
        }
        if let Some(first) = rows.first().map(|r: &Vec<f64>| r.len()) {
            if row.len() != first {
                return Err(format!(
                    "{}:{line}:{}: expected {first} columns, found {}",
                    path.display(),
                    row.len().min(first) + 1,
                    row.len()
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(format!("{}: file contains no rows", path.display()));
    }
    Ok(rows)
}

pub fn read_covariance(path: &Path) -> Result<CovarianceMatrix, String> {
    let rows = read_numeric(path)?;
    let n = rows.len();
    if rows[0].len() != n {
        return Err(format!(
            "{}:1:1: covariance must be square, found {n} rows of {} columns",
            path.display(),
            rows[0].len()
        ));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    CovarianceMatrix::from_row_slice(n, &flat).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn read_signal(path: &Path) -> Result<Signal, String> {
    let rows = read_numeric(path)?;
    if rows[0].len() != 1 {
        return Err(format!(
            "{}:1:2: signal must have one column, found {}",
            path.display(),
            rows[0].len()
        ));
    }
    let v: Vec<f64> = rows.into_iter().map(|r| r[0]).collect();
    Signal::from_slice(&v).map_err(|e| format!("{}: {e}", path.display()))
}

/// Renders rows as headerless CSV with shortest round-trip float formatting.
pub fn render_numeric<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut out = String::new();
    for row in rows {
        let fields: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        writeln!(out, "{}", fields.join(",")).unwrap();
    }
    out
}

pub fn covariance_csv(sigma: &CovarianceMatrix) -> String {
    let m = sigma.matrix();
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    render_numeric(rows.iter().map(Vec::as_slice))
}

pub fn vector_csv(values: &[f64]) -> String {
    render_numeric(values.chunks(1))
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), String> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()))
}

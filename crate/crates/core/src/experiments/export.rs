//! Result tables and their CSV / TSV / plain-text renderings.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Text(String),
    Int(i64),
    Num(f64),
    Bool(bool),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Num(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Value after the 6-significant-digit rounding applied on export.
    pub fn rounded(&self) -> Value {
        match self {
            Value::Num(x) => Value::Num(round_sig6(*x)),
            v => v.clone(),
        }
    }

    /// Parses an exported field back into the narrowest matching variant.
    pub fn parse_field(s: &str) -> Value {
        match s {
            "true" => return Value::Bool(true),
            "false" => return Value::Bool(false),
            _ => {}
        }
        if let Ok(i) = s.parse::<i64>() {
            return Value::Int(i);
        }
        match s.parse::<f64>() {
            Ok(x) if !s.is_empty() => Value::Num(x),
            _ => Value::Text(s.to_string()),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Num(x)
    }
}

impl From<usize> for Value {
    fn from(i: usize) -> Self {
        Value::Int(i as i64)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Text(s) => f.write_str(s),
            Value::Int(i) => write!(f, "{i}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Num(x) => {
                let r = round_sig6(*x);
                if r.is_nan() {
                    f.write_str("NaN")
                } else if r.is_infinite() {
                    f.write_str(if r > 0.0 { "inf" } else { "-inf" })
                } else if r != 0.0 && (r.abs() < 1e-4 || r.abs() >= 1e15) {
                    write!(f, "{r:e}")
                } else if r == r.trunc() && r.abs() < 1e15 {
                    // keep a decimal point so the field parses back as a float
                    write!(f, "{r:.1}")
                } else {
                    write!(f, "{r}")
                }
            }
        }
    }
}

/// A named table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Appends a row; panics if its width does not match the header.
    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width mismatch in table {}", self.name);
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Rows whose column `col` equals the text `value`.
    pub fn rows_where<'a>(&'a self, col: &str, value: &'a str) -> impl Iterator<Item = &'a Vec<Value>> + 'a {
        let idx = self.column_index(col);
        self.rows
            .iter()
            .filter(move |r| idx.is_some_and(|i| r[i].to_string() == value))
    }

    /// The table with every number rounded to 6 significant digits.
    pub fn rounded(&self) -> Table {
        Table {
            name: self.name.clone(),
            columns: self.columns.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(Value::rounded).collect())
                .collect(),
        }
    }
}

/// Output formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Tsv,
    Text,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Tsv => "tsv",
            Format::Text => "txt",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "tsv" => Ok(Format::Tsv),
            "text" | "txt" => Ok(Format::Text),
            _ => Err(Error::Parameter(format!("unknown format '{s}' (csv, tsv, text)"))),
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Writes `table` to `out` in `format`.
pub fn export<W: Write>(table: &Table, format: Format, out: W) -> Result<()> {
    match format {
        Format::Csv | Format::Tsv => {
            let delim = if format == Format::Csv { b',' } else { b'\t' };
            let mut w = csv::WriterBuilder::new().delimiter(delim).from_writer(out);
            w.write_record(&table.columns).map_err(csv_err)?;
            for row in &table.rows {
                w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
            }
            w.flush()?;
            Ok(())
        }
        Format::Text => write_text(table, out),
    }
}

fn write_text<W: Write>(table: &Table, mut out: W) -> Result<()> {
    let cells: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| r.iter().map(|v| v.to_string()).collect())
        .collect();
    let widths: Vec<usize> = (0..table.columns.len())
        .map(|j| {
            cells
                .iter()
                .map(|r| r[j].chars().count())
                .chain(std::iter::once(table.columns[j].chars().count()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |fields: &[String]| -> String {
        fields
            .iter()
            .zip(&widths)
            .map(|(f, w)| format!("{f:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    writeln!(out, "{}", line(&table.columns))?;
    for r in &cells {
        writeln!(out, "{}", line(r))?;
    }
    Ok(())
}

/// Renders `table` to a string.
pub fn export_string(table: &Table, format: Format) -> Result<String> {
    let mut buf = Vec::new();
    export(table, format, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

/// Parses CSV or TSV output of [`export`] back into a table.
pub fn parse_delimited(name: &str, text: &str, format: Format) -> Result<Table> {
    let delim = match format {
        Format::Csv => b',',
        Format::Tsv => b'\t',
        Format::Text => return Err(Error::Parameter("text tables are not parseable".into())),
    };
    let mut r = csv::ReaderBuilder::new()
        .delimiter(delim)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let columns = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(csv_err)?.iter().map(Value::parse_field).collect());
    }
    Ok(Table {
        name: name.to_string(),
        columns,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Table {
        let mut t = Table::new("t", &["method", "gamma", "T", "sharpe", "flag"]);
        t.push(vec!["crisp(g=0.5,p=100)".into(), 0.5.into(), 120usize.into(), 1.23456789.into(), true.into()]);
        t.push(vec!["hrp".into(), 0.0.into(), 60usize.into(), (-3.2e-7).into(), false.into()]);
        t
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new("e", &["a", "b"]);
        assert_eq!(export_string(&t, Format::Csv).unwrap(), "a,b\n");
        assert_eq!(export_string(&t, Format::Tsv).unwrap(), "a\tb\n");
    }

    #[test]
    fn one_cell_is_two_lines() {
        let mut t = Table::new("one", &["x"]);
        t.push(vec![2.5.into()]);
        let s = export_string(&t, Format::Csv).unwrap();
        assert_eq!(s, "x\n2.5\n");
        assert_eq!(export_string(&t, Format::Text).unwrap().lines().count(), 2);
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(Value::Num(1.23456789).to_string(), "1.23457");
        assert_eq!(Value::Num(20.41241452).to_string(), "20.4124");
        assert_eq!(Value::Num(-3.2e-7).to_string(), "-3.2e-7");
        assert_eq!(Value::Num(3.0).to_string(), "3.0");
        assert_eq!(Value::Num(0.0).to_string(), "0.0");
        assert_eq!(Value::Num(123456789.0).to_string(), "123457000.0");
    }

    #[test]
    fn csv_round_trip() {
        let t = sample();
        for fmt in [Format::Csv, Format::Tsv] {
            let s = export_string(&t, fmt).unwrap();
            let back = parse_delimited("t", &s, fmt).unwrap();
            assert_eq!(back, t.rounded());
            assert_eq!(export_string(&back, fmt).unwrap(), s);
        }
    }

    #[test]
    fn text_is_aligned() {
        let s = export_string(&sample(), Format::Text).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 3);
        let col = lines[0].find("gamma").unwrap();
        assert_eq!(&lines[2][col..col + 3], "0.0");
    }

    #[test]
    fn format_parsing() {
        assert_eq!("CSV".parse::<Format>().unwrap(), Format::Csv);
        assert_eq!("text".parse::<Format>().unwrap(), Format::Text);
        assert!("xml".parse::<Format>().is_err());
    }

    proptest! {
        #[test]
        fn numeric_round_trip(x in -1e12f64..1e12, e in -12i32..12) {
            let v = x * 10f64.powi(e);
            let mut t = Table::new("p", &["v"]);
            t.push(vec![v.into()]);
            let s = export_string(&t, Format::Csv).unwrap();
            let back = parse_delimited("p", &s, Format::Csv).unwrap();
            let got = back.rows[0][0].as_f64().unwrap();
            prop_assert_eq!(got, round_sig6(v));
        }
    }
}

//! Metric records: one line per record, space-separated `key=value` fields,
//! first field `record=<kind>`. Floats use the shortest representation that
//! round-trips, so identical runs give identical bytes.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use crate::amuf::write_bytes;
use crate::error::{AmuError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    fields: Vec<(String, String)>,
}

impl Record {
    pub fn new(kind: &str) -> Self {
        Self { fields: vec![("record".into(), kind.into())] }
    }

    /// Appends a field. Values must not contain whitespace.
    pub fn field(mut self, key: &str, value: impl fmt::Display) -> Self {
        let value = value.to_string();
        debug_assert!(!value.contains(char::is_whitespace), "{key}={value:?}");
        self.fields.push((key.into(), value));
        self
    }

    pub fn opt(self, key: &str, value: Option<impl fmt::Display>) -> Self {
        match value {
            Some(v) => self.field(key, v),
            None => self.field(key, "none"),
        }
    }

    pub fn kind(&self) -> &str {
        &self.fields[0].1
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn fields(&self) -> &[(String, String)] {
        &self.fields
    }
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.fields.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Parses one record line.
pub fn parse_line(line: &str) -> Result<Record> {
    let mut fields = Vec::new();
    for token in line.split_whitespace() {
        let (k, v) =
            token.split_once('=').ok_or_else(|| AmuError::Format(format!("record field {token:?} has no '='")))?;
        fields.push((k.to_string(), v.to_string()));
    }
    match fields.first() {
        Some((k, _)) if k == "record" => Ok(Record { fields }),
        _ => Err(AmuError::Format(format!("record line {line:?} does not start with record=<kind>"))),
    }
}

pub fn parse(text: &str) -> Result<Vec<Record>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(parse_line).collect()
}

pub fn render(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{r}");
    }
    out
}

pub fn write(path: &Path, records: &[Record]) -> Result<()> {
    write_bytes(path, render(records).as_bytes())
}

/// Left-aligned text table for the terminal.
#[derive(Debug, Clone, Default)]
pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self { headers: headers.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cols = self.headers.len();
        let mut widths: Vec<usize> = self.headers.iter().map(String::len).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |f: &mut fmt::Formatter<'_>, cells: &[String]| -> fmt::Result {
            let mut s = String::new();
            for (i, cell) in cells.iter().enumerate().take(cols) {
                if i > 0 {
                    s.push_str("  ");
                }
                let _ = write!(s, "{cell:<w$}", w = widths[i]);
            }
            writeln!(f, "{}", s.trim_end())
        };
        line(f, &self.headers)?;
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        line(f, &rule)?;
        for row in &self.rows {
            line(f, row)?;
        }
        Ok(())
    }
}

/// Percentage with two decimals, for tables.
pub fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

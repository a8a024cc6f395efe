//! Diagnostics time series as CSV.
//!
//! The header row is mandatory and floats are written with 17 significant
//! digits so that every value round-trips exactly.

use std::io::Write;

use crate::diagnostics::{DiagnosticsRecord, CSV_COLUMNS};
use crate::error::{BgkError, Result};

fn csv_err(e: csv::Error) -> BgkError {
    BgkError::Csv(e.to_string())
}

/// `{:.16e}`: 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Streams diagnostics rows, header first.
pub struct DiagnosticsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> DiagnosticsWriter<W> {
    pub fn new(writer: W) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        inner.write_record(CSV_COLUMNS).map_err(csv_err)?;
        Ok(Self { inner })
    }

    /// Continues an existing file without repeating the header.
    pub fn append(writer: W) -> Self {
        Self {
            inner: csv::WriterBuilder::new().has_headers(false).from_writer(writer),
        }
    }

    pub fn write(&mut self, record: &DiagnosticsRecord) -> Result<()> {
        self.inner
            .write_record(record.to_row().map(format_float))
            .map_err(csv_err)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn to_csv_string(records: &[DiagnosticsRecord]) -> String {
    let mut buf = Vec::new();
    {
        let mut w = DiagnosticsWriter::new(&mut buf).expect("in-memory write");
        for r in records {
            w.write(r).expect("in-memory write");
        }
        w.flush().expect("in-memory write");
    }
    String::from_utf8(buf).expect("ascii")
}

/// Numeric CSV with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

pub fn parse_table(text: &str) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let columns: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if columns.is_empty() || columns.iter().all(|c| c.is_empty()) {
        return Err(BgkError::Csv("missing header row".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field.trim().parse::<f64>().map_err(|_| {
                    BgkError::Csv(format!(
                        "row {}, column {:?}: not a number: {field:?}",
                        i + 1,
                        columns[j]
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { columns, rows })
}

/// Parses a diagnostics file; the header must match [`CSV_COLUMNS`] exactly.
pub fn parse_diagnostics(text: &str) -> Result<Vec<DiagnosticsRecord>> {
    let table = parse_table(text)?;
    if table.columns != CSV_COLUMNS {
        return Err(BgkError::Csv(format!(
            "unexpected header {:?}, expected {:?}",
            table.columns.join(","),
            CSV_COLUMNS.join(",")
        )));
    }
    Ok(table
        .rows
        .iter()
        .map(|r| DiagnosticsRecord::from_row(r.as_slice().try_into().expect("checked width")))
        .collect())
}

//! CSV sink and reader for monitor series. Numbers carry 17 significant
//! digits so every `f64` survives the round trip.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ksflow::dynamics::{NormRow, COLUMNS};

use crate::error::CliError;

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Streams rows to disk as they are produced, flushing after each one so an
/// aborted run leaves a readable prefix.
pub struct SeriesWriter {
    inner: csv::Writer<File>,
}

impl SeriesWriter {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let mut inner = csv::Writer::from_path(path).map_err(|e| CliError::config(format!("cannot create {}: {e}", path.display())))?;
        inner.write_record(COLUMNS).map_err(csv_err)?;
        Ok(Self { inner })
    }

    pub fn push(&mut self, row: &NormRow) -> Result<(), CliError> {
        self.inner.write_record(row.values().iter().map(|&v| format_f64(v))).map_err(csv_err)?;
        self.inner.flush().map_err(|e| CliError::io("cannot flush series", e))
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::config(format!("csv error: {e}"))
}

/// Column-oriented view of a CSV file with a header row.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let headers: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(|h| h.trim().to_string()).collect();
        let mut columns = vec![Vec::new(); headers.len()];
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(csv_err)?;
            for (col, field) in columns.iter_mut().zip(record.iter()) {
                let v = field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::config(format!("{}: row {} has non-numeric value {field:?}", path.display(), line + 1)))?;
                col.push(v);
            }
        }
        Ok(Self { headers, columns })
    }

    pub fn column(&self, name: &str) -> Result<&[f64], CliError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| CliError::config(format!("missing column {name}; available: {}", self.headers.join(", "))))
    }
}

/// Writes a small table of named string fields, one row per record.
pub fn write_records(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::config(format!("cannot create {}: {e}", path.display())))?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io("cannot flush table", e))
}

/// `key = value` lines, the same shape as the snapshot manifest.
pub fn write_manifest(path: &Path, entries: &[(&str, String)]) -> Result<(), CliError> {
    let mut f = File::create(path).map_err(|e| CliError::io(&format!("cannot create {}", path.display()), e))?;
    for (k, v) in entries {
        writeln!(f, "{k} = {v}").map_err(|e| CliError::io("cannot write manifest", e))?;
    }
    Ok(())
}

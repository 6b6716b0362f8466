//! File-backed tables passed between tools as CSV payloads.
//!
//! Payloads are UTF-8, RFC 4180 quoted, with a header of prefixed column
//! names. An empty field is NULL.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::value::{field_to_json, parse_number};

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("csv error in {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("io error in {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: row {row} has {found} fields, header has {expected}")]
    Arity { path: PathBuf, row: usize, found: usize, expected: usize },
}

/// A handle on a CSV payload produced by a tool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableHandle {
    pub path: PathBuf,
    pub schema: Vec<String>,
    pub row_count: usize,
}

pub type Row = Vec<Option<String>>;

/// An in-memory table; cells are raw field text, `None` for NULL.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Table { columns, rows: Vec::new() }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// A column is numeric iff every non-NULL cell parses as a number.
    /// An all-NULL column is treated as numeric.
    pub fn is_numeric(&self, col: usize) -> bool {
        self.rows
            .iter()
            .filter_map(|r| r[col].as_deref())
            .all(|cell| parse_number(cell).is_some())
    }

    pub fn column_json(&self, col: usize) -> Vec<Value> {
        let numeric = self.is_numeric(col);
        self.rows.iter().map(|r| field_to_json(r[col].as_deref(), numeric)).collect()
    }

    /// Rows rendered as JSON arrays with per-column typing.
    pub fn to_json_rows(&self) -> Value {
        let numeric: Vec<bool> = (0..self.columns.len()).map(|c| self.is_numeric(c)).collect();
        Value::Array(
            self.rows
                .iter()
                .map(|r| {
                    Value::Array(
                        r.iter()
                            .zip(&numeric)
                            .map(|(cell, &num)| field_to_json(cell.as_deref(), num))
                            .collect(),
                    )
                })
                .collect(),
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<TableHandle, TableError> {
        let csv_err = |source| TableError::Csv { path: path.to_path_buf(), source };
        let mut writer = csv::WriterBuilder::new()
            .quote_style(csv::QuoteStyle::Necessary)
            .from_path(path)
            .map_err(csv_err)?;
        writer.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            writer
                .write_record(row.iter().map(|c| c.as_deref().unwrap_or("")))
                .map_err(csv_err)?;
        }
        writer.flush().map_err(|source| TableError::Io { path: path.to_path_buf(), source })?;
        Ok(TableHandle {
            path: path.to_path_buf(),
            schema: self.columns.clone(),
            row_count: self.rows.len(),
        })
    }

    pub fn read_csv(path: &Path) -> Result<Table, TableError> {
        let csv_err = |source| TableError::Csv { path: path.to_path_buf(), source };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_path(path)
            .map_err(csv_err)?;
        let columns: Vec<String> =
            reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(csv_err)?;
            if record.len() != columns.len() {
                return Err(TableError::Arity {
                    path: path.to_path_buf(),
                    row: i + 1,
                    found: record.len(),
                    expected: columns.len(),
                });
            }
            rows.push(
                record
                    .iter()
                    .map(|f| if f.is_empty() { None } else { Some(f.to_string()) })
                    .collect(),
            );
        }
        Ok(Table { columns, rows })
    }
}

impl TableHandle {
    pub fn load(&self) -> Result<Table, TableError> {
        Table::read_csv(&self.path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Table {
        Table {
            columns: vec!["t_a".into(), "t_b".into()],
            rows: vec![
                vec![Some("1".into()), Some("x, \"quoted\"".into())],
                vec![None, Some("y".into())],
            ],
        }
    }

    #[test]
    fn csv_round_trip_preserves_nulls_and_quotes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let handle = sample().write_csv(&path).unwrap();
        assert_eq!(handle.row_count, 2);
        assert_eq!(handle.schema, vec!["t_a", "t_b"]);
        assert_eq!(Table::read_csv(&path).unwrap(), sample());
    }

    #[test]
    fn header_only_table_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        let t = Table::new(vec!["a_x".into()]);
        t.write_csv(&path).unwrap();
        assert_eq!(Table::read_csv(&path).unwrap(), t);
    }

    #[test]
    fn numeric_detection_ignores_nulls() {
        let t = sample();
        assert!(t.is_numeric(0));
        assert!(!t.is_numeric(1));
    }
}

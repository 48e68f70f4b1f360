//! Output tables and number formatting.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn full(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// Rounds to 6 significant digits.
pub fn round6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

/// Rounds every number in a JSON value to 6 significant digits.
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) => match (n.as_u64(), n.as_i64(), n.as_f64()) {
            (Some(_), _, _) | (_, Some(_), _) => Value::Number(n),
            (_, _, Some(f)) => {
                serde_json::Number::from_f64(round6(f)).map_or(Value::Null, Value::Number)
            }
            _ => Value::Number(n),
        },
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

/// One cell of a table.
#[derive(Debug, Clone)]
pub enum Cell {
    Int(u64),
    /// Written with full precision.
    Float(f64),
    /// Written with 6 significant digits.
    Short(f64),
    Text(String),
    Missing,
}

impl Cell {
    fn to_csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => full(*x),
            Cell::Short(x) => round6(*x).to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Int(i) => Value::from(*i),
            Cell::Float(x) => serde_json::Number::from_f64(*x).map_or(Value::Null, Value::Number),
            Cell::Short(x) => {
                serde_json::Number::from_f64(round6(*x)).map_or(Value::Null, Value::Number)
            }
            Cell::Text(s) => Value::from(s.clone()),
            Cell::Missing => Value::Null,
        }
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Missing, Cell::Short)
    }
}

pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: Vec<&'static str>) -> Self {
        Table {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Writes every output file of a run, each tagged with the resolved config.
pub struct Writer {
    dir: PathBuf,
    format: Format,
    config: Value,
}

impl Writer {
    pub fn new(dir: &Path, format: Format, config: Value) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Writer {
            dir: dir.to_path_buf(),
            format,
            config,
        })
    }

    fn write_file(&self, name: &str, body: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let mut f = fs::File::create(&path)
            .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))?;
        f.write_all(body)
            .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    /// Writes `stem.csv` or `stem.json` depending on the format.
    pub fn table(&self, stem: &str, table: &Table) -> Result<PathBuf, CliError> {
        match self.format {
            Format::Csv => {
                let mut buf = format!("# config: {}\n", self.config).into_bytes();
                {
                    let mut wr = csv::Writer::from_writer(&mut buf);
                    let map = |e: csv::Error| CliError::Internal(e.to_string());
                    wr.write_record(&table.columns).map_err(map)?;
                    for row in &table.rows {
                        wr.write_record(row.iter().map(Cell::to_csv)).map_err(map)?;
                    }
                    wr.flush().map_err(|e| CliError::Internal(e.to_string()))?;
                }
                self.write_file(&format!("{stem}.csv"), &buf)
            }
            Format::Json => {
                let rows: Vec<Value> = table
                    .rows
                    .iter()
                    .map(|r| {
                        Value::Object(
                            table
                                .columns
                                .iter()
                                .zip(r)
                                .map(|(c, v)| (c.to_string(), v.to_json()))
                                .collect(),
                        )
                    })
                    .collect();
                self.json(stem, serde_json::json!({ "rows": rows }))
            }
        }
    }

    /// Writes `stem.json` with the config as its first key.
    pub fn json(&self, stem: &str, body: Value) -> Result<PathBuf, CliError> {
        let mut obj = serde_json::Map::new();
        obj.insert("config".into(), self.config.clone());
        match body {
            Value::Object(o) => obj.extend(o),
            other => {
                obj.insert("result".into(), other);
            }
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(obj))
            .map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        self.write_file(&format!("{stem}.json"), text.as_bytes())
    }
}

//! Output rendering: tabular results as CSV (with the effective configuration
//! echoed in `# key = value` comment lines) or as a JSON document carrying the
//! same configuration object. Numbers are printed in shortest round-trip form
//! so emitted files re-parse to the exact values computed.

use std::io::Write;
use std::path::Path;

use crate::{CResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn parse(name: &str) -> CResult<Self> {
        match name {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Failure::Config(format!(
                "unknown format '{other}' (expected csv or json)"
            ))),
        }
    }
}

/// One output cell. Missing values render as empty CSV fields / JSON nulls.
#[derive(Debug, Clone)]
pub enum Cell {
    Num(f64),
    OptNum(Option<f64>),
    Int(u64),
    Str(String),
}

impl Cell {
    fn csv_field(&self) -> String {
        match self {
            Cell::Num(v) => fmt_num(*v),
            Cell::OptNum(Some(v)) => fmt_num(*v),
            Cell::OptNum(None) => String::new(),
            Cell::Int(v) => v.to_string(),
            Cell::Str(s) => s.clone(),
        }
    }

    fn json_value(&self) -> serde_json::Value {
        match self {
            Cell::Num(v) | Cell::OptNum(Some(v)) => serde_json::Number::from_f64(*v)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            Cell::OptNum(None) => serde_json::Value::Null,
            Cell::Int(v) => serde_json::Value::from(*v),
            Cell::Str(s) => serde_json::Value::from(s.as_str()),
        }
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// A rendered result set: effective configuration plus a rectangular table.
pub struct TableDoc {
    pub config: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl TableDoc {
    pub fn render(&self, format: Format) -> CResult<String> {
        match format {
            Format::Csv => self.render_csv(),
            Format::Json => self.render_json(),
        }
    }

    fn render_csv(&self) -> CResult<String> {
        let mut text = config_comment(&self.config);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)
            .and_then(|_| {
                self.rows.iter().try_for_each(|row| {
                    w.write_record(row.iter().map(|c| c.csv_field()))
                })
            })
            .map_err(|e| Failure::Internal(format!("csv encoding failed: {e}")))?;
        let body = w
            .into_inner()
            .map_err(|e| Failure::Internal(format!("csv encoding failed: {e}")))?;
        text.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
        Ok(text)
    }

    fn render_json(&self) -> CResult<String> {
        let config: serde_json::Map<String, serde_json::Value> = self
            .config
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::from(v.as_str())))
            .collect();
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: serde_json::Map<String, serde_json::Value> = self
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(col, cell)| (col.clone(), cell.json_value()))
                    .collect();
                serde_json::Value::Object(obj)
            })
            .collect();
        let doc = serde_json::json!({ "config": config, "rows": rows });
        serde_json::to_string_pretty(&doc)
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| Failure::Internal(format!("json encoding failed: {e}")))
    }
}

pub fn config_comment(pairs: &[(String, String)]) -> String {
    let mut text = String::new();
    for (k, v) in pairs {
        text.push_str(&format!("# {k} = {v}\n"));
    }
    text
}

pub fn write_out(path: Option<&Path>, content: &str) -> CResult<()> {
    match path {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(content.as_bytes())
            .map_err(|e| Failure::Internal(format!("stdout write failed: {e}"))),
    }
}

pub fn kv(key: &str, value: impl std::fmt::Display) -> (String, String) {
    (key.to_string(), value.to_string())
}

//! Tabular output as CSV (with a `#` provenance line) or JSON.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use serde_json::{json, Value};

use crate::error::CliError;
use crate::params::Format;

/// Bumped whenever columns change.
pub const SCHEMA_VERSION: u32 = 1;
pub const OUT_DIR_ENV: &str = "SOFIRGL_OUT_DIR";

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

pub fn render(table: &Table, params: &Value, format: Format) -> String {
    match format {
        Format::Csv => {
            let mut s = format!(
                "# sofi-rgl {} schema={} params={}\n",
                env!("CARGO_PKG_VERSION"),
                SCHEMA_VERSION,
                params
            );
            s += &table.columns.join(",");
            s.push('\n');
            for row in &table.rows {
                s += &row.iter().map(cell).collect::<Vec<_>>().join(",");
                s.push('\n');
            }
            s
        }
        Format::Json => {
            let rows: Vec<Value> = table
                .rows
                .iter()
                .map(|r| Value::Object(table.columns.iter().map(|c| c.to_string()).zip(r.iter().cloned()).collect()))
                .collect();
            let doc = json!({
                "tool": "sofi-rgl",
                "version": env!("CARGO_PKG_VERSION"),
                "schema": SCHEMA_VERSION,
                "params": params,
                "columns": table.columns,
                "rows": rows,
            });
            serde_json::to_string_pretty(&doc).expect("serialisable") + "\n"
        }
    }
}

/// Resolves the destination: explicit path (`-` for stdout), else
/// `$SOFIRGL_OUT_DIR/<command>.<ext>`, else stdout.
pub fn destination(out: Option<&str>, command: &str, format: Format) -> Option<PathBuf> {
    let ext = match format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    match out {
        Some("-") => None,
        Some(path) => Some(PathBuf::from(path)),
        None => std::env::var_os(OUT_DIR_ENV)
            .filter(|d| !d.is_empty())
            .map(|d| PathBuf::from(d).join(format!("{command}.{ext}"))),
    }
}

pub fn emit(text: &str, dest: Option<PathBuf>) -> Result<(), CliError> {
    match dest {
        None => {
            io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(&path, text)?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = Table::new(&["x", "scheme", "ok"]);
        t.push(vec![json!(0.5), json!("M+AC2"), json!(true)]);
        t.push(vec![json!(1e-7), json!("a,b"), Value::Null]);
        let s = render(&t, &json!({"alpha": 1.0}), Format::Csv);
        let lines: Vec<&str> = s.lines().collect();
        assert!(lines[0].starts_with("# sofi-rgl ") && lines[0].contains("params={\"alpha\":1.0}"));
        assert_eq!(lines[1], "x,scheme,ok");
        assert_eq!(lines[2], "0.5,M+AC2,true");
        assert_eq!(lines[3], "1e-7,\"a,b\",");
    }

    #[test]
    fn json_mirrors_columns() {
        let mut t = Table::new(&["x", "y"]);
        t.push(vec![json!(1), json!(2.5)]);
        let v: Value = serde_json::from_str(&render(&t, &json!({}), Format::Json)).unwrap();
        assert_eq!(v["schema"], SCHEMA_VERSION);
        assert_eq!(v["rows"][0]["y"], 2.5);
        assert_eq!(v["columns"][1], "y");
    }
}

//! Report assembly and serialization.
//!
//! Every subcommand produces a [`Report`]: a resolved-configuration echo,
//! summary notes, and a rectangular table. CSV output is RFC-4180 with a
//! `#`-prefixed header block; JSON mirrors the same content. Floats are
//! printed with 17 significant digits so a re-run reproduces files
//! bit-exactly.

use std::io::Write;

pub const VERSION: &str = concat!("pushasep ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone)]
pub enum Value {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Value {
    fn csv(&self) -> String {
        match self {
            Value::Int(v) => v.to_string(),
            Value::Float(v) => fmt_float(*v),
            Value::Text(s) => csv_escape(s),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Value::Int(v) => {
                if v.unsigned_abs() > (1u64 << 53) {
                    serde_json::Value::String(v.to_string())
                } else {
                    serde_json::Value::from(*v)
                }
            }
            Value::Float(v) => serde_json::Value::String(fmt_float(*v)),
            Value::Text(s) => serde_json::Value::String(s.clone()),
        }
    }
}

/// 17 significant digits, locale-free.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Default)]
pub struct Report {
    pub command: String,
    /// Resolved configuration, echoed into the header; re-running with
    /// these values reproduces the file.
    pub config: Vec<(String, String)>,
    /// Named summary scalars.
    pub notes: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Report {
            command: command.to_string(),
            ..Default::default()
        }
    }

    pub fn cfg(&mut self, key: &str, value: impl std::fmt::Display) {
        self.config.push((key.to_string(), value.to_string()));
    }

    pub fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    pub fn note_float(&mut self, key: &str, value: f64) {
        self.notes.push((key.to_string(), fmt_float(value)));
    }

    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "# {VERSION}")?;
        writeln!(out, "# command = {}", self.command)?;
        for (k, v) in &self.config {
            writeln!(out, "# {k} = {v}")?;
        }
        for (k, v) in &self.notes {
            writeln!(out, "# {k} = {v}")?;
        }
        writeln!(out, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| v.csv()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn write_json(&self, out: &mut impl Write) -> std::io::Result<()> {
        let mut cfg = serde_json::Map::new();
        for (k, v) in &self.config {
            cfg.insert(k.clone(), serde_json::Value::String(v.clone()));
        }
        let mut notes = serde_json::Map::new();
        for (k, v) in &self.notes {
            notes.insert(k.clone(), serde_json::Value::String(v.clone()));
        }
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| serde_json::Value::Array(r.iter().map(|v| v.json()).collect()))
            .collect();
        let doc = serde_json::json!({
            "version": VERSION,
            "command": self.command,
            "config": serde_json::Value::Object(cfg),
            "notes": serde_json::Value::Object(notes),
            "columns": self.columns,
            "rows": rows,
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }
}

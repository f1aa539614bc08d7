//! Output of a finished command. Text and JSON are rendered from the same
//! value, so both always carry identical numbers.

use std::io::{self, Write};

use serde_json::{json, Map, Value};

use crate::args::Cli;

pub const SCHEMA_VERSION: u32 = 1;

pub struct Outcome {
    pub command: &'static str,
    pub fields: Map<String, Value>,
    /// Tabular data destined for stdout when no output file was given.
    pub csv: Option<String>,
    /// Extra human-readable block printed before the fields.
    pub table: Option<String>,
    /// Row data included only in the JSON report.
    pub rows: Option<Value>,
}

impl Outcome {
    pub fn new(command: &'static str) -> Self {
        Outcome {
            command,
            fields: Map::new(),
            csv: None,
            table: None,
            rows: None,
        }
    }

    pub fn set(&mut self, key: &str, value: impl serde::Serialize) -> &mut Self {
        let v = serde_json::to_value(value).expect("report values serialize");
        self.fields.insert(key.to_string(), v);
        self
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

pub fn emit(cli: &Cli, outcome: &Outcome) -> io::Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if cli.json {
        let mut result = outcome.fields.clone();
        if let Some(rows) = &outcome.rows {
            result.insert("rows".into(), rows.clone());
        }
        let doc = json!({
            "schema_version": SCHEMA_VERSION,
            "command": outcome.command,
            "result": result,
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&doc)?)?;
        return Ok(());
    }
    if let Some(csv) = &outcome.csv {
        out.write_all(csv.as_bytes())?;
    }
    if cli.quiet {
        return Ok(());
    }
    // Keep stdout clean for CSV consumers.
    let mut summary: Box<dyn Write> = if outcome.csv.is_some() {
        Box::new(io::stderr())
    } else {
        Box::new(out)
    };
    if let Some(table) = &outcome.table {
        summary.write_all(table.as_bytes())?;
    }
    for (k, v) in &outcome.fields {
        writeln!(summary, "{k}: {}", render(v))?;
    }
    Ok(())
}

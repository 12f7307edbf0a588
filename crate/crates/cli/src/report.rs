use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;

use crate::args::RunConfig;
use crate::error::CliResult;

/// What a command produced. `failure` is reported after the report has
/// been written, for commands whose result is itself a verdict.
pub struct Outcome {
    pub result: Value,
    pub csv: Option<String>,
    pub failure: Option<anyhow::Error>,
}

impl Outcome {
    pub fn new(result: impl Serialize) -> CliResult<Self> {
        Ok(Self {
            result: serde_json::to_value(result)?,
            csv: None,
            failure: None,
        })
    }

    pub fn with_csv(mut self, csv: String) -> Self {
        self.csv = Some(csv);
        self
    }
}

#[derive(Serialize)]
struct Report<'a> {
    tool: &'static str,
    version: &'static str,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    timestamp: u64,
    run_config: &'a RunConfig,
    result: &'a Value,
}

pub fn render_json(config: &RunConfig, result: &Value) -> CliResult<String> {
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let report = Report {
        tool: "vismem",
        version: vismem_core::VERSION,
        timestamp,
        run_config: config,
        result,
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    Ok(text)
}

fn csv_cell(v: &Value) -> String {
    let s = match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    };
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}

/// One-row table of the scalar fields of a result object.
pub fn scalar_csv(result: &Value) -> String {
    let Some(obj) = result.as_object() else {
        return format!("value\n{}\n", csv_cell(result));
    };
    let scalars: Vec<(&String, &Value)> = obj.iter().filter(|(_, v)| !v.is_array() && !v.is_object()).collect();
    let header: Vec<&str> = scalars.iter().map(|(k, _)| k.as_str()).collect();
    let row: Vec<String> = scalars.iter().map(|(_, v)| csv_cell(v)).collect();
    format!("{}\n{}\n", header.join(","), row.join(","))
}

pub fn emit(text: &str, destination: Option<&Path>) -> CliResult<()> {
    match destination {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing report {}", path.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

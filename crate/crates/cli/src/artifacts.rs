//! Provenance stamping and the file helpers shared by the commands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use betarate::corpus::{parse_records, ParsedCorpus};
use betarate::model::PredictionRecord;

use crate::config::RunConfig;
use crate::errors::{internal, missing, schema, CliError};

/// Identity of the run that produced an artifact; every output embeds one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn of(cfg: &RunConfig) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config_hash: cfg.config_hash(),
        }
    }

    /// The same fields as string pairs, for the binary model header.
    pub fn meta(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("tool_version".to_string(), self.tool_version.clone()),
            ("seed".to_string(), self.seed.to_string()),
            ("config_hash".to_string(), self.config_hash.clone()),
        ])
    }

    /// The `{"provenance": ...}` metadata line leading JSONL artifacts.
    pub fn jsonl_header(&self) -> String {
        serde_json::json!({ "provenance": self }).to_string()
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes)
        .map_err(|e| internal(format!("cannot write `{}`: {e}", path.display())))
}

/// Serializes a JSON-object artifact with `provenance` added at top level.
pub fn write_json(path: &Path, value: &impl Serialize, prov: &Provenance) -> Result<(), CliError> {
    let mut value = serde_json::to_value(value).map_err(internal)?;
    let Value::Object(map) = &mut value else {
        return Err(internal("artifact is not a JSON object"));
    };
    map.insert("provenance".into(), serde_json::to_value(prov).map_err(internal)?);
    let mut text = serde_json::to_string_pretty(&value).map_err(internal)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Reads a JSON artifact; the embedded `provenance` key is tolerated.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| missing(path, e))?;
    serde_json::from_str(&text).map_err(|e| schema(path, e))
}

/// Writes JSONL rows behind a leading provenance line.
pub fn write_jsonl<T: Serialize>(
    path: &Path,
    rows: &[T],
    prov: &Provenance,
) -> Result<(), CliError> {
    let mut text = prov.jsonl_header();
    text.push('\n');
    for row in rows {
        text.push_str(&serde_json::to_string(row).map_err(internal)?);
        text.push('\n');
    }
    write_bytes(path, text.as_bytes())
}

/// Parses a corpus file. The library parser skips malformed lines; the CLI
/// promotes them to hard schema errors. Unknown-key warnings go to stderr.
pub fn load_corpus(path: &Path) -> Result<ParsedCorpus, CliError> {
    let file = File::open(path).map_err(|e| missing(path, e))?;
    let parsed = parse_records(BufReader::new(file)).map_err(|e| schema(path, e))?;
    if let Some(first) = parsed.report.line_errors.first() {
        let n = parsed.report.line_errors.len();
        return Err(schema(path, format!("line {}: {} ({n} malformed line(s))", first.line, first.message)));
    }
    for warning in &parsed.report.warnings {
        eprintln!("warning: {}: {warning}", path.display());
    }
    Ok(parsed)
}

/// Reads a predictions file, skipping the provenance line.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| missing(path, e))?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |e: &dyn std::fmt::Display| schema(path, format!("line {}: {e}", idx + 1));
        let value: Value = serde_json::from_str(line).map_err(|e| at(&e))?;
        if value.as_object().is_some_and(|o| o.len() == 1 && o.contains_key("provenance")) {
            continue;
        }
        rows.push(serde_json::from_value(value).map_err(|e| at(&e))?);
    }
    Ok(rows)
}

/// Line format for fused judge scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusedRecord {
    pub instance_id: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
}

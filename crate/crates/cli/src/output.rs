//! Atomic CSV and JSON emission with reproducibility headers.

use crate::error::CliError;
use abp_core::normalization::GridFunction;
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

/// What produced a file; written as `#` lines above every CSV table.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub command: &'static str,
    pub seed: u64,
    /// Resolved configuration as single-line JSON.
    pub config: String,
}

impl Provenance {
    pub fn new(command: &'static str, seed: u64, config: &impl Serialize) -> Self {
        Self { command, seed, config: serde_json::to_string(config).unwrap_or_else(|_| "null".into()) }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self { columns: columns.into_iter().map(Into::into).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Shortest round-trip representation; `NaN`/`inf` spelled out.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Writes via a temporary sibling and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| CliError::Io(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::Io(format!("{}: {e}", path.display()))
    })
}

pub fn csv_bytes(prov: &Provenance, kind: &str, table: &Table) -> Result<Vec<u8>, CliError> {
    let mut out = format!(
        "# abp-csv schema={SCHEMA_VERSION} kind={kind} command={}\n# seed={}\n# config={}\n",
        prov.command, prov.seed, prov.config
    )
    .into_bytes();
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(&table.columns).map_err(err)?;
    for r in &table.rows {
        w.write_record(r).map_err(err)?;
    }
    out.extend(w.into_inner().map_err(|e| CliError::Io(e.to_string()))?);
    Ok(out)
}

pub fn write_csv(dir: &Path, name: &str, prov: &Provenance, kind: &str, table: &Table) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    atomic_write(&path, &csv_bytes(prov, kind, table)?)?;
    Ok(path)
}

pub fn write_json(dir: &Path, name: &str, prov: &Provenance, body: serde_json::Value) -> Result<PathBuf, CliError> {
    let config: serde_json::Value = serde_json::from_str(&prov.config).unwrap_or(serde_json::Value::Null);
    let doc = serde_json::json!({
        "schema": SCHEMA_VERSION,
        "command": prov.command,
        "seed": prov.seed,
        "config": config,
        "result": body,
    });
    let path = dir.join(name);
    let mut bytes = serde_json::to_vec_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))?;
    bytes.push(b'\n');
    atomic_write(&path, &bytes)?;
    Ok(path)
}

/// Reads column `A` of a bias table written by `run`; `#` lines are skipped.
pub fn read_bias_csv(path: &Path, g: usize, m: usize) -> Result<GridFunction, CliError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Config(format!("fixed_bias.path: {}: {e}", path.display())))?;
    let headers = r.headers().map_err(|e| CliError::Config(format!("fixed_bias.path: {e}")))?.clone();
    let col = headers
        .iter()
        .position(|h| h == "A")
        .ok_or_else(|| CliError::Config("fixed_bias.path: no column `A`".into()))?;
    let rep = headers.iter().position(|h| h == "replica");
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Config(format!("fixed_bias.path: {e}")))?;
        if rep.is_some_and(|i| rec.get(i) != Some("0")) {
            continue;
        }
        let v: f64 = rec
            .get(col)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::Config("fixed_bias.path: unreadable value in column `A`".into()))?;
        values.push(v);
    }
    if values.len() != g.pow(m as u32) {
        return Err(CliError::Config(format!(
            "fixed_bias.path: {} values for a grid of {}",
            values.len(),
            g.pow(m as u32)
        )));
    }
    GridFunction::new(values, g, m).map_err(|e| CliError::Config(format!("fixed_bias.path: {e}")))
}

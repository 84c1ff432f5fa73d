//! CSV tables and the run manifest.
//!
//! Numbers are written with 17 significant digits (`{:.16e}`), which
//! round-trips every `f64`. The digest is the SHA-256 of the numeric content
//! of all tables (name, header and formatted rows, in output order); it is
//! embedded in the first line of every CSV and in the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Version of the column layout; bump when a column is renamed, added or
/// reordered.
pub const SCHEMA_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";

/// One CSV file: an optional text label column followed by numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub label: Option<(String, Vec<String>)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.into(), label: None, columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn with_label(mut self, column: &str) -> Self {
        self.label = Some((column.into(), Vec::new()));
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len(), "row width of {}", self.name);
        self.rows.push(row);
    }

    pub fn push_labelled(&mut self, label: &str, row: Vec<f64>) {
        self.label.as_mut().expect("table has a label column").1.push(label.into());
        self.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    fn header(&self) -> String {
        let mut cols: Vec<&str> = Vec::new();
        if let Some((l, _)) = &self.label {
            cols.push(l);
        }
        cols.extend(self.columns.iter().map(String::as_str));
        cols.join(",")
    }

    fn numeric_row(row: &[f64]) -> String {
        row.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(",")
    }
}

pub fn digest(tables: &[Table]) -> String {
    let mut h = Sha256::new();
    for t in tables {
        h.update(t.name.as_bytes());
        h.update(b"\n");
        h.update(t.columns.join(",").as_bytes());
        h.update(b"\n");
        for row in &t.rows {
            h.update(Table::numeric_row(row).as_bytes());
            h.update(b"\n");
        }
    }
    format!("sha256:{}", hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub schema_version: u32,
    pub command: String,
    /// Resolved configuration in Γ₁₂ᴬ units; loadable through `--config`.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub threads: usize,
    /// Seconds since the Unix epoch at start.
    pub started_unix: f64,
    pub wall_clock_seconds: f64,
    pub tolerances: BTreeMap<String, f64>,
    /// Command-specific results (calibrated κ, resonances, checks).
    pub summary: serde_json::Value,
    pub files: Vec<FileRecord>,
    pub digest: String,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Writes every table and the manifest into `out`; returns the manifest path.
pub fn write_run(out: &Path, mut manifest: RunManifest, tables: &[Table]) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out).map_err(io(out))?;
    manifest.digest = digest(tables);
    manifest.files = tables.iter().map(|t| FileRecord { name: t.file_name(), columns: t.columns.clone(), rows: t.rows.len() }).collect();
    for t in tables {
        let mut text = format!("# {} {} schema {} {}\n{}\n", manifest.tool, manifest.version, SCHEMA_VERSION, manifest.digest, t.header());
        for (k, row) in t.rows.iter().enumerate() {
            if let Some((_, labels)) = &t.label {
                text.push_str(&labels[k]);
                text.push(',');
            }
            text.push_str(&Table::numeric_row(row));
            text.push('\n');
        }
        let path = out.join(t.file_name());
        fs::write(&path, text).map_err(io(&path))?;
    }
    let path = out.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(io(&path))?;
    Ok(path)
}

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Experiment, ExperimentConfig};
use crate::error::{io_err, CliError, Result};

/// Work that was requested but not done, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub stage: String,
    pub what: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub weight: String,
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub files: Vec<String>,
    pub skipped: Vec<Skipped>,
    pub checks: Vec<CheckOutcome>,
}

/// JSON payload wrapper carrying the provenance of every report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    pub seed: u64,
    pub report: T,
}

/// Serialized writer for one output directory.
///
/// Layout: `manifest.json`, `basis.csv`, `cells.csv`, `samples/`, `reports/`,
/// `scatter/`. CSV files open with `# config_hash=` and `# seed=` lines.
pub struct Bundle {
    root: PathBuf,
    command: String,
    config: ExperimentConfig,
    config_hash: String,
    seed: u64,
    weight: String,
    files: Vec<String>,
    skipped: Vec<Skipped>,
    checks: Vec<CheckOutcome>,
}

impl Bundle {
    pub fn create(exp: &Experiment, command: &str) -> Result<Self> {
        let root = exp.config.out.clone();
        for sub in ["", "samples", "reports", "scatter"] {
            let d = root.join(sub);
            fs::create_dir_all(&d).map_err(io_err(&d))?;
        }
        Ok(Self {
            root,
            command: command.to_string(),
            config: exp.config.clone(),
            config_hash: exp.config_hash.clone(),
            seed: exp.config.seed,
            weight: exp.weight.description.clone(),
            files: Vec::new(),
            skipped: Vec::new(),
            checks: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn header(&self) -> String {
        format!("# config_hash={}\n# seed={}\n", self.config_hash, self.seed)
    }

    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        let mut f = fs::File::create(&path).map_err(io_err(&path))?;
        f.write_all(bytes).map_err(io_err(&path))?;
        self.files.push(rel.to_string());
        Ok(())
    }

    /// CSV of serializable rows, header row taken from the field names.
    pub fn write_csv<S: Serialize>(&mut self, rel: &str, rows: impl IntoIterator<Item = S>) -> Result<()> {
        let mut w = csv::Writer::from_writer(self.header().into_bytes());
        for row in rows {
            w.serialize(row).map_err(|e| CliError::Format { path: self.root.join(rel), message: e.to_string() })?;
        }
        let body =
            w.into_inner().map_err(|e| CliError::Format { path: self.root.join(rel), message: e.to_string() })?;
        self.put(rel, &body)
    }

    /// Text that is already CSV, prefixed with the provenance lines.
    pub fn write_text(&mut self, rel: &str, body: &str) -> Result<()> {
        let text = format!("{}{body}", self.header());
        self.put(rel, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, report: T) -> Result<()> {
        let stamped = Stamped { config_hash: self.config_hash.clone(), seed: self.seed, report };
        let mut text = serde_json::to_string_pretty(&stamped).expect("reports serialize");
        text.push('\n');
        self.put(rel, text.as_bytes())
    }

    pub fn skip(&mut self, stage: &str, what: impl Into<String>, reason: impl Into<String>) {
        self.skipped.push(Skipped { stage: stage.to_string(), what: what.into(), reason: reason.into() });
    }

    pub fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push(CheckOutcome { name: name.into(), pass, detail: detail.into() });
    }

    pub fn failed_checks(&self) -> Vec<String> {
        self.checks.iter().filter(|c| !c.pass).map(|c| format!("{}: {}", c.name, c.detail)).collect()
    }

    /// Writes `manifest.json`; a failed run is marked incomplete with the
    /// failing stage.
    pub fn finish(self, outcome: &Result<()>) -> Result<Manifest> {
        let (status, failed_stage, error) = match outcome {
            Ok(()) => ("complete", None, None),
            Err(e) => ("incomplete", e.stage().map(str::to_string), Some(e.to_string())),
        };
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command,
            config: self.config,
            config_hash: self.config_hash,
            seed: self.seed,
            weight: self.weight,
            status: status.to_string(),
            failed_stage,
            error,
            files: self.files,
            skipped: self.skipped,
            checks: self.checks,
        };
        let path = self.root.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(manifest)
    }
}

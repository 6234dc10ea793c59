use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use fockdpp_core::weights::Weight;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclid,
    Dk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProcessKind {
    Dpp,
    Poisson,
}

/// Everything a run depends on. Read from a TOML file, then overridden by
/// command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Exponent of φ(z) = |z|^α; exclusive with `weight_table`.
    pub alpha: Option<f64>,
    /// Two-column `r,phi` table of a radial weight.
    pub weight_table: Option<PathBuf>,
    /// Radius of the disk on which the truncated kernel is valid.
    pub window: f64,
    pub tol: f64,
    /// Fixed kernel rank; overrides `tol`.
    pub rank: Option<usize>,
    pub rank_cap: usize,
    pub nmin: u32,
    pub nmax: u32,
    pub scales: Vec<f64>,
    /// Sweep one cell per annulus; sector spectra are rotation invariant.
    pub representative_cells: bool,
    pub samples: usize,
    pub seed: u64,
    /// Radius of the disk reported by the samplers; defaults to `window`.
    pub sample_window: Option<f64>,
    pub ginibre_size: usize,
    pub metric: Metric,
    pub process: ProcessKind,
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub check: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            weight_table: None,
            window: 12.0,
            tol: 1e-10,
            rank: None,
            rank_cap: 16384,
            nmin: 1,
            nmax: 12,
            scales: vec![1.0],
            representative_cells: false,
            samples: 100,
            seed: 0,
            sample_window: None,
            ginibre_size: 256,
            metric: Metric::Euclid,
            process: ProcessKind::Dpp,
            out: PathBuf::from("fockdpp-out"),
            threads: 0,
            check: false,
        }
    }
}

/// Command-line overrides; every flag wins over the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long = "weight-table", global = true)]
    pub weight_table: Option<PathBuf>,
    #[arg(long, global = true)]
    pub window: Option<f64>,
    #[arg(long, global = true, conflicts_with = "tol")]
    pub rank: Option<usize>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub nmax: Option<u32>,
    #[arg(long, global = true)]
    pub scale: Option<f64>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub metric: Option<Metric>,
    #[arg(long, global = true, value_enum)]
    pub process: Option<ProcessKind>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Assert the acceptance properties of the command; exit 4 on failure.
    #[arg(long, global = true)]
    pub check: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Config file (if any) with flags applied on top.
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let mut c = match &flags.config {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        if let Some(a) = flags.alpha {
            c.alpha = Some(a);
            c.weight_table = None;
        }
        if let Some(p) = &flags.weight_table {
            c.weight_table = Some(p.clone());
            c.alpha = None;
        }
        if let Some(w) = flags.window {
            c.window = w;
        }
        if let Some(r) = flags.rank {
            c.rank = Some(r);
        }
        if let Some(t) = flags.tol {
            c.tol = t;
            c.rank = None;
        }
        if let Some(n) = flags.nmax {
            c.nmax = n;
        }
        if let Some(s) = flags.scale {
            c.scales = vec![s];
        }
        if let Some(n) = flags.samples {
            c.samples = n;
        }
        if let Some(s) = flags.seed {
            c.seed = s;
        }
        if let Some(o) = &flags.out {
            c.out = o.clone();
        }
        if let Some(m) = flags.metric {
            c.metric = m;
        }
        if let Some(p) = flags.process {
            c.process = p;
        }
        if let Some(t) = flags.threads {
            c.threads = t;
        }
        c.check |= flags.check;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        match (self.alpha, &self.weight_table) {
            (None, None) => return bad("one of `alpha` or `weight_table` is required".into()),
            (Some(_), Some(_)) => return bad("`alpha` and `weight_table` are exclusive".into()),
            (Some(a), None) if !(a > 0.0 && a.is_finite()) => return bad(format!("alpha must be positive, got {a}")),
            _ => {}
        }
        if !(self.window > 0.0 && self.window.is_finite()) {
            return bad(format!("window must be positive, got {}", self.window));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad(format!("tol must lie in (0, 1), got {}", self.tol));
        }
        if self.rank == Some(0) || self.rank_cap == 0 {
            return bad("rank and rank_cap must be positive".into());
        }
        if self.nmax == 0 || self.nmin == 0 || self.nmin > self.nmax {
            return bad(format!("need 1 ≤ nmin ≤ nmax, got {}..{}", self.nmin, self.nmax));
        }
        if self.scales.is_empty() || self.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad(format!("scales must be positive, got {:?}", self.scales));
        }
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        if let Some(w) = self.sample_window {
            if !(w > 0.0 && w <= self.window) {
                return bad(format!("sample_window must lie in (0, window], got {w}"));
            }
        }
        if self.ginibre_size == 0 || self.ginibre_size > 4096 {
            return bad(format!("ginibre_size must lie in 1..=4096, got {}", self.ginibre_size));
        }
        Ok(())
    }

    pub fn sample_radius(&self) -> f64 {
        self.sample_window.unwrap_or(self.window)
    }
}

/// A validated config with its weight loaded and its hash computed.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub weight: Weight,
    /// SHA-256 over the numeric part of the config and the weight table bytes.
    pub config_hash: String,
    /// As `config_hash`, restricted to the fields that determine samples.
    pub sampling_hash: String,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (weight, table_bytes) = match (&config.alpha, &config.weight_table) {
            (Some(a), _) => (Weight::power(*a).map_err(|e| CliError::Config(e.to_string()))?, Vec::new()),
            (None, Some(path)) => {
                let bytes = fs::read(path).map_err(io_err(path))?;
                let text = String::from_utf8(bytes.clone())
                    .map_err(|e| CliError::Format { path: path.clone(), message: e.to_string() })?;
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                let w = Weight::parse_table(&text, format!("table {name}"))
                    .map_err(|e| CliError::Format { path: path.clone(), message: e.to_string() })?;
                (w, bytes)
            }
            (None, None) => unreachable!("validated"),
        };
        let config_hash = hash_config(&config, &table_bytes);
        let sampling_hash = hash_config(&sampling_part(&config), &table_bytes);
        Ok(Self { config, weight, config_hash, sampling_hash })
    }
}

/// The config with analysis-only fields reset to their defaults.
fn sampling_part(config: &ExperimentConfig) -> ExperimentConfig {
    let d = ExperimentConfig::default();
    ExperimentConfig {
        nmin: d.nmin,
        nmax: d.nmax,
        scales: d.scales,
        representative_cells: d.representative_cells,
        metric: d.metric,
        process: d.process,
        ..config.clone()
    }
}

/// Output location, thread count and the check flag do not affect numbers,
/// so they are left out of the hash; the table path is replaced by its bytes.
fn hash_config(config: &ExperimentConfig, table_bytes: &[u8]) -> String {
    let mut c = config.clone();
    c.out = PathBuf::new();
    c.threads = 0;
    c.check = false;
    c.weight_table = None;
    let json = serde_json::to_vec(&c).expect("config serializes");
    let mut h = Sha256::new();
    h.update(&json);
    h.update(table_bytes);
    format!("{:x}", h.finalize())
}

//! File formats, configuration and the experiment driver for `fockdpp-core`.
//!
//! A run resolves an [`ExperimentConfig`](config::ExperimentConfig) from a
//! TOML file and command-line flags, executes one [`Command`](commands::Command)
//! on a bounded rayon pool and writes a bundle:
//!
//! ```text
//! manifest.json    config, config hash, seed, files, skipped work, checks
//! basis.csv        log-moments of the truncated kernel
//! cells.csv        one row per swept cell
//! samples/*.csv    point configurations, with JSON sidecars
//! reports/*.json   verdicts, regressions, gap and count summaries
//! scatter/*.csv    two-column regression data
//! ```
//!
//! Every file carries the config hash and seed. Parallel stages collect in
//! input order and all writes happen on one thread, so identical configs give
//! byte-identical files.

pub mod bundle;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use commands::{run, Command};
pub use config::{Experiment, ExperimentConfig, Flags};
pub use error::{CliError, Result};

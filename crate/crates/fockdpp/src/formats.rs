use std::fs;
use std::path::{Path, PathBuf};

use fockdpp_core::samplers::{PointConfiguration, ProcessTag, Window};
use fockdpp_core::Complex64;
use serde::{Deserialize, Serialize};

use crate::bundle::{Bundle, Stamped};
use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub x: f64,
    pub y: f64,
}

/// Metadata written next to each `samples/*.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSidecar {
    pub points_file: String,
    /// Hash of the config fields that determine the sample.
    pub sampling_hash: String,
    pub stream: u64,
    pub process: ProcessTag,
    pub window: Window,
    pub kernel_rank: Option<usize>,
    pub n_points: usize,
}

pub fn prefix(process: ProcessTag) -> &'static str {
    match process {
        ProcessTag::Dpp => "dpp",
        ProcessTag::Poisson => "poisson",
        ProcessTag::GinibreOracle => "ginibre",
    }
}

/// Writes `samples/<prefix>_<stream>.csv` and its JSON sidecar.
pub fn write_sample(bundle: &mut Bundle, sampling_hash: &str, stream: u64, config: &PointConfiguration) -> Result<()> {
    let stem = format!("samples/{}_{stream:05}", prefix(config.process));
    let points_file = format!("{stem}.csv");
    bundle.write_csv(&points_file, config.points.iter().map(|z| PointRow { x: z.re, y: z.im }))?;
    bundle.write_json(
        &format!("{stem}.json"),
        SampleSidecar {
            points_file,
            sampling_hash: sampling_hash.to_string(),
            stream,
            process: config.process,
            window: config.window,
            kernel_rank: config.kernel_rank,
            n_points: config.len(),
        },
    )
}

pub fn read_points(path: &Path) -> Result<Vec<Complex64>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    r.deserialize::<PointRow>()
        .map(|row| {
            row.map(|p| Complex64::new(p.x, p.y))
                .map_err(|e| CliError::Format { path: path.to_path_buf(), message: e.to_string() })
        })
        .collect()
}

/// All samples of one process in a bundle directory, in stream order.
pub fn read_samples(root: &Path, process: ProcessTag) -> Result<Vec<(u64, PointConfiguration, String)>> {
    let dir = root.join("samples");
    let want = format!("{}_", prefix(process));
    let mut sidecars: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with(&want))
        })
        .collect();
    sidecars.sort();
    let mut out = Vec::with_capacity(sidecars.len());
    for p in sidecars {
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        let s: Stamped<SampleSidecar> =
            serde_json::from_str(&text).map_err(|e| CliError::Format { path: p.clone(), message: e.to_string() })?;
        let points = read_points(&root.join(&s.report.points_file))?;
        if points.len() != s.report.n_points {
            return Err(CliError::Format {
                path: p,
                message: format!("sidecar lists {} points, file has {}", s.report.n_points, points.len()),
            });
        }
        out.push((
            s.report.stream,
            PointConfiguration {
                points,
                window: s.report.window,
                process: s.report.process,
                seed: s.seed,
                kernel_rank: s.report.kernel_rank,
            },
            s.report.sampling_hash,
        ));
    }
    Ok(out)
}

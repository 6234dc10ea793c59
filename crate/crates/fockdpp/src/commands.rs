use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Subcommand;
use fockdpp_core::analysis::{
    borel_cantelli_sum, cell_counts, ghosh_test, median, min_gap, scaling_regression, upper_density, BorelCantelli,
    CellFilter, CellQuantity, CountStatistics, DensityEstimate, GhoshReport, ScalingReport, GAP_QUANTILES,
};
use fockdpp_core::kernel::{kernel_diag_check, TruncatedKernel};
use fockdpp_core::samplers::{
    ginibre_oracle_with, rng_for, sample_dpp_with, DppSampler, PointConfiguration, PoissonSampler, ProcessTag, Window,
};
use fockdpp_core::spectra::{analyze_cell, Cell, CellPartition, CellRecord};
use fockdpp_core::weights::{Process, RadiusField, SeparationVerdict};
use fockdpp_core::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::bundle::Bundle;
use crate::config::{Experiment, Metric, ProcessKind};
use crate::error::{CliError, Result, StageExt};
use crate::formats::{read_samples, write_sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Separation verdicts and Borel–Cantelli partial sums.
    Classify,
    /// ρ on a radial grid.
    Rho,
    /// Moments of the truncated kernel.
    KernelBuild,
    /// Restriction spectra and cell probabilities over the grid.
    SpectraSweep,
    /// Projection-DPP samples.
    SampleDpp,
    /// Poisson samples with intensity ρ⁻² dm.
    SamplePoisson,
    /// Ginibre eigenvalue samples.
    Ginibre,
    /// Gaps, counts, density and negative association of stored samples.
    Analyze,
    /// Every stage in order.
    FullRun,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::Rho => "rho",
            Command::KernelBuild => "kernel-build",
            Command::SpectraSweep => "spectra-sweep",
            Command::SampleDpp => "sample-dpp",
            Command::SamplePoisson => "sample-poisson",
            Command::Ginibre => "ginibre",
            Command::Analyze => "analyze",
            Command::FullRun => "full-run",
        }
    }
}

/// Lazily built state shared by the stages of one run.
struct Context<'a> {
    exp: &'a Experiment,
    rf: RadiusField,
    kernel: Option<TruncatedKernel>,
    records: Option<Vec<CellRecord>>,
}

impl<'a> Context<'a> {
    fn new(exp: &'a Experiment) -> Self {
        Self { exp, rf: RadiusField::new(exp.weight.clone()), kernel: None, records: None }
    }

    fn kernel(&mut self) -> Result<&TruncatedKernel> {
        if self.kernel.is_none() {
            let c = &self.exp.config;
            let k = match c.rank {
                Some(n) => TruncatedKernel::with_rank(&self.rf, n, c.window),
                None => TruncatedKernel::for_window_with_cap(&self.rf, c.window, c.tol, c.rank_cap),
            }
            .stage("kernel-build")?;
            self.kernel = Some(k);
        }
        Ok(self.kernel.as_ref().expect("built above"))
    }
}

/// Runs `command`, writes the bundle and its manifest, and returns the
/// output directory.
pub fn run(command: Command, exp: &Experiment) -> Result<PathBuf> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(exp.config.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let mut bundle = Bundle::create(exp, command.name())?;
    let outcome = pool.install(|| {
        let mut ctx = Context::new(exp);
        execute(command, &mut ctx, &mut bundle)
    });
    let failed = bundle.failed_checks();
    let root = bundle.root().to_path_buf();
    bundle.finish(&outcome)?;
    outcome?;
    if exp.config.check && !failed.is_empty() {
        return Err(CliError::Check(failed));
    }
    Ok(root)
}

fn execute(command: Command, ctx: &mut Context<'_>, b: &mut Bundle) -> Result<()> {
    match command {
        Command::Classify => classify(ctx, b),
        Command::Rho => rho(ctx, b),
        Command::KernelBuild => kernel_build(ctx, b),
        Command::SpectraSweep => spectra_sweep(ctx, b),
        Command::SampleDpp => {
            sample_dpp(ctx, b)?;
            Ok(())
        }
        Command::SamplePoisson => {
            sample_poisson(ctx, b)?;
            Ok(())
        }
        Command::Ginibre => ginibre(ctx, b),
        Command::Analyze => {
            let tag = match ctx.exp.config.process {
                ProcessKind::Dpp => ProcessTag::Dpp,
                ProcessKind::Poisson => ProcessTag::Poisson,
            };
            let samples = read_samples(b.root(), tag)?;
            if samples.is_empty() {
                return Err(CliError::Config(format!(
                    "no {} samples under {}",
                    crate::formats::prefix(tag),
                    b.root().join("samples").display()
                )));
            }
            let want = &ctx.exp.sampling_hash;
            if let Some((_, _, h)) = samples.iter().find(|(_, _, h)| h != want) {
                return Err(CliError::Config(format!(
                    "samples were drawn under sampling hash {h}, this config has {want}"
                )));
            }
            let configs: Vec<PointConfiguration> = samples.into_iter().map(|(_, c, _)| c).collect();
            analyze(ctx, b, tag, &configs)
        }
        Command::FullRun => {
            classify(ctx, b)?;
            rho(ctx, b)?;
            kernel_build(ctx, b)?;
            spectra_sweep(ctx, b)?;
            let dpp = sample_dpp(ctx, b)?;
            let poisson = sample_poisson(ctx, b)?;
            analyze(ctx, b, ProcessTag::Dpp, &dpp)?;
            analyze(ctx, b, ProcessTag::Poisson, &poisson)
        }
    }
}

#[derive(Serialize)]
struct ClassifyReport {
    weight: String,
    verdicts: Vec<SeparationVerdict>,
    borel_cantelli: Vec<BorelCantelli>,
}

fn classify(ctx: &mut Context<'_>, b: &mut Bundle) -> Result<()> {
    let mut verdicts = Vec::new();
    let mut sums = Vec::new();
    for process in [Process::Determinantal, Process::Poisson] {
        let v = ctx.rf.classify_separation(process).stage("classify")?;
        if ctx.exp.config.check {
            let agrees = v.closed_form.is_none_or(|c| c == v.verdict) && !v.conflict;
            b.check(
                format!("classify/{process:?}"),
                agrees,
                format!("verdict {:?}, closed form {:?}", v.verdict, v.closed_form),
            );
        }
        verdicts.push(v);
        let n_max = ctx.exp.config.nmax.max(10);
        sums.push(borel_cantelli_sum(&ctx.rf, process.gamma(), n_max).stage("classify")?);
    }
    b.write_json(
        "reports/classify.json",
        ClassifyReport { weight: ctx.exp.weight.description.clone(), verdicts, borel_cantelli: sums },
    )
}

#[derive(Serialize)]
struct RhoRow {
    r: f64,
    rho: f64,
    asymptotic: f64,
}

fn rho(ctx: &mut Context<'_>, b: &mut Bundle) -> Result<()> {
    const POINTS: usize = 241;
    let w = ctx.exp.config.window;
    let rows: Vec<RhoRow> = (0..POINTS)
        .map(|i| {
            let r = w * i as f64 / (POINTS - 1) as f64;
            Ok(RhoRow { r, rho: ctx.rf.rho_at_radius(r)?, asymptotic: ctx.rf.asymptotic_guess(r) })
        })
        .collect::<fockdpp_core::Result<_>>()
        .stage("rho")?;
    if ctx.exp.config.check {
        let worst = rows.windows(2).map(|p| (p[1].rho - p[0].rho).abs() / (p[1].r - p[0].r)).fold(0.0, f64::max);
        b.check("rho/lipschitz", worst <= 1.0 + 1e-6, format!("max |Δρ|/|Δr| = {worst:.6}"));
    }
    b.write_csv("scatter/rho.csv", rows)
}

#[derive(Serialize)]
struct KernelReport {
    weight: String,
    rank: usize,
    window_radius: f64,
    diag_error_bound: f64,
    support_radius: f64,
    /// Extremes of K(z,z)e^{−2φ(z)} on a radial probe set.
    diag_density_range: (f64, f64),
}

fn kernel_build(ctx: &mut Context<'_>, b: &mut Bundle) -> Result<()> {
    let tol = ctx.exp.config.tol;
    let fixed_rank = ctx.exp.config.rank.is_some();
    let desc = ctx.exp.weight.description.clone();
    let rf = RadiusField::new(ctx.exp.weight.clone());
    let k = ctx.kernel()?;
    let w = k.window_radius;
    let probes: Vec<Complex64> = (0..64).map(|i| Complex64::from_polar(w * i as f64 / 63.0, 0.7 * i as f64)).collect();
    let report = KernelReport {
        weight: desc,
        rank: k.rank(),
        window_radius: w,
        diag_error_bound: k.diag_error_bound,
        support_radius: k.basis.support_radius(&rf, 45.0).stage("kernel-build")?,
        diag_density_range: kernel_diag_check(k, &probes).stage("kernel-build")?,
    };
    let table = k.basis.to_table();
    if ctx.exp.config.check && !fixed_rank {
        b.check(
            "kernel/diag-error",
            report.diag_error_bound <= tol,
            format!("bound {:e}, tol {tol:e}", report.diag_error_bound),
        );
    }
    b.write_text("basis.csv", &table)?;
    b.write_json("reports/kernel.json", report)
}

#[derive(Serialize)]
struct ScalingEntry {
    scale: f64,
    quantity: CellQuantity,
    gamma_expected: f64,
    fit: Option<ScalingReport>,
    error: Option<String>,
}

#[derive(Serialize)]
struct ScatterRow {
    ln_rho: f64,
    ln_value: f64,
}

const REGRESSIONS: [(CellQuantity, f64, &str); 4] = [
    (CellQuantity::PGeq2Exact, 6.0, "p_geq2"),
    (CellQuantity::PoissonPGeq2, 4.0, "poisson_p_geq2"),
    (CellQuantity::Lambda1Lb, 2.0, "lambda1_lb"),
    (CellQuantity::Lambda2Lb, 4.0, "lambda2_lb"),
];

fn spectra_sweep(ctx: &mut Context<'_>, b: &mut Bundle) -> Result<()> {
    let c = ctx.exp.config.clone();
    let k = ctx.kernel()?.clone();
    let mut records = Vec::new();
    let mut scaling = Vec::new();
    for &scale in &c.scales {
        let partition = CellPartition::standard(scale, c.nmax).stage("spectra-sweep")?;
        let mut cells: Vec<Cell> = Vec::new();
        let mut outside: BTreeMap<u32, usize> = BTreeMap::new();
        for cell in partition.cells() {
            let (n, kk) = cell.index().expect("grid cells are indexed");
            if n < c.nmin || (c.representative_cells && kk != 1) {
                continue;
            }
            if cell.max_modulus() > k.window_radius {
                *outside.entry(n).or_insert(0) += 1;
            } else {
                cells.push(cell);
            }
        }
        for (n, count) in outside {
            b.skip(
                "spectra-sweep",
                format!("scale {scale} annulus {n}: {count} cells"),
                format!("outside the kernel window of radius {}", k.window_radius),
            );
        }
        let recs: Vec<CellRecord> = cells
            .par_iter()
            .map(|cell| analyze_cell(&k, cell))
            .collect::<fockdpp_core::Result<_>>()
            .stage("spectra-sweep")?;
        for (quantity, gamma, name) in REGRESSIONS {
            let entry = match scaling_regression(&recs, quantity, gamma, &CellFilter::default()) {
                Ok(fit) => {
                    let rows: Vec<ScatterRow> = fit
                        .xs
                        .iter()
                        .zip(&fit.ys)
                        .map(|(&ln_rho, &ln_value)| ScatterRow { ln_rho, ln_value })
                        .collect();
                    b.write_csv(&format!("scatter/{name}_scale{scale}.csv"), rows)?;
                    ScalingEntry { scale, quantity, gamma_expected: gamma, fit: Some(fit), error: None }
                }
                Err(e) => {
                    ScalingEntry { scale, quantity, gamma_expected: gamma, fit: None, error: Some(e.to_string()) }
                }
            };
            scaling.push(entry);
        }
        records.extend(recs);
    }
    if c.check {
        check_records(b, &records);
    }
    b.write_csv("cells.csv", records.iter())?;
    b.write_json("reports/scaling.json", scaling)?;
    ctx.records = Some(records);
    Ok(())
}

fn check_records(b: &mut Bundle, records: &[CellRecord]) {
    let mut witness = Vec::new();
    let mut second = Vec::new();
    for r in records {
        let ok = r.lambda1_lb <= r.lambda1 * (1.0 + 1e-9) + 1e-300
            && r.lambda2_lb <= r.lambda2 * (1.0 + 1e-9) + 1e-300
            && r.p_geq2_exact >= r.lambda1_lb * r.lambda2_lb * (1.0 - 1e-9);
        if !ok {
            witness.push(format!("({}, {}) at scale {}", r.n, r.k, r.scale));
        }
        if r.trace <= 0.2 && (r.p_geq2_exact - r.p_geq2_second_order).abs() > 2.0 * r.trace.powi(3) {
            second.push(format!("({}, {}) at scale {}", r.n, r.k, r.scale));
        }
    }
    b.check("spectra/witness-bounds", witness.is_empty(), format!("violations: {witness:?}"));
    b.check("spectra/second-order", second.is_empty(), format!("violations: {second:?}"));
}

fn sample_window(ctx: &Context<'_>) -> Result<Window> {
    Window::disk(ctx.exp.config.sample_radius()).map_err(|e| CliError::Config(e.to_string()))
}

fn sample_dpp(ctx: &mut Context<'_>, b: &mut Bundle) -> Result<Vec<PointConfiguration>> {
    let window = sample_window(ctx)?;
    let (seed, n) = (ctx.exp.config.seed, ctx.exp.config.samples as u64);
    let k = ctx.kernel()?;
    let sampler = DppSampler::new(k);
    let configs: Vec<PointConfiguration> = (0..n)
        .into_par_iter()
        .map(|i| sample_dpp_with(&sampler, window, seed, &mut rng_for(seed, i)))
        .collect::<fockdpp_core::Result<_>>()
        .stage("sample-dpp")?;
    for (i, c) in configs.iter().enumerate() {
        write_sample(b, &ctx.exp.sampling_hash, i as u64, c)?;
    }
    Ok(configs)
}

fn sample_poisson(ctx: &mut Context<'_>, b: &mut Bundle) -> Result<Vec<PointConfiguration>> {
    let window = sample_window(ctx)?;
    let (seed, n) = (ctx.exp.config.seed, ctx.exp.config.samples as u64);
    let sampler = PoissonSampler::new(&ctx.rf, window).stage("sample-poisson")?;
    let configs: Vec<PointConfiguration> = (0..n)
        .into_par_iter()
        .map(|i| PointConfiguration {
            points: sampler.sample(&mut rng_for(seed, i)),
            window,
            process: ProcessTag::Poisson,
            seed,
            kernel_rank: None,
        })
        .collect();
    for (i, c) in configs.iter().enumerate() {
        write_sample(b, &ctx.exp.sampling_hash, i as u64, c)?;
    }
    Ok(configs)
}

fn ginibre(ctx: &mut Context<'_>, b: &mut Bundle) -> Result<()> {
    let (seed, n, size) = (ctx.exp.config.seed, ctx.exp.config.samples as u64, ctx.exp.config.ginibre_size);
    let configs: Vec<PointConfiguration> = (0..n)
        .into_par_iter()
        .map(|i| ginibre_oracle_with(size, seed, &mut rng_for(seed, i)))
        .collect::<fockdpp_core::Result<_>>()
        .stage("ginibre")?;
    for (i, c) in configs.iter().enumerate() {
        write_sample(b, &ctx.exp.sampling_hash, i as u64, c)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CellCountRow {
    n: u32,
    k: u32,
    mean: f64,
    variance: f64,
    p_geq2_empirical: f64,
    expected_mean: f64,
    expected_p_geq2: f64,
}

#[derive(Serialize)]
struct AnalyzeReport {
    process: ProcessTag,
    samples: usize,
    metric: Metric,
    median_min_gap_euclidean: f64,
    median_min_gap_dk: Option<f64>,
    pooled_gap_quantiles: Vec<(f64, f64)>,
    count_scale: f64,
    count_annuli: u32,
    density: DensityEstimate,
    ghosh: Option<GhoshReport>,
}

fn analyze(ctx: &mut Context<'_>, b: &mut Bundle, tag: ProcessTag, configs: &[PointConfiguration]) -> Result<()> {
    let c = ctx.exp.config.clone();
    let metric_kernel = match c.metric {
        Metric::Dk => Some(ctx.kernel()?.clone()),
        Metric::Euclid => None,
    };
    let gaps: Vec<_> = configs
        .par_iter()
        .map(|cfg| min_gap(cfg, metric_kernel.as_ref()))
        .collect::<fockdpp_core::Result<_>>()
        .stage("analyze")?;
    let eu: Vec<f64> = gaps.iter().map(|g| g.min_gap_euclidean).collect();
    let dk: Option<Vec<f64>> = gaps.iter().map(|g| g.min_gap_dk).collect();
    let mut pooled: Vec<f64> =
        configs.iter().flat_map(|cfg| fockdpp_core::analysis::nearest_neighbor_distances(&cfg.points)).collect();
    pooled.sort_by(|a, b| a.total_cmp(b));
    let pooled_gap_quantiles = if pooled.is_empty() {
        Vec::new()
    } else {
        GAP_QUANTILES.iter().map(|&q| (q, fockdpp_core::analysis::quantile_sorted(&pooled, q))).collect()
    };

    // counts on the standard grid of the first scale, inside the sample window
    let scale = c.scales[0];
    let radius = configs.iter().map(|cfg| cfg.window.outer_radius()).fold(f64::INFINITY, f64::min);
    let annuli = ((radius / scale) + 1e-9).floor() as u32;
    let mut stats = CountStatistics::default();
    let mut rows = Vec::new();
    if annuli >= 1 {
        let partition = CellPartition::standard(scale, annuli).stage("analyze")?;
        let inner = Window::disk(partition.outer_radius()).stage("analyze")?;
        for cfg in configs {
            let counts = cell_counts(&cfg.restrict(inner).stage("analyze")?, &partition).stage("analyze")?;
            stats.add(&counts);
        }
        // rotation invariance: one spectrum per annulus
        let expected: Vec<(f64, f64)> = match tag {
            ProcessTag::Dpp => {
                let k = ctx.kernel()?.clone();
                (1..=annuli)
                    .into_par_iter()
                    .map(|n| analyze_cell(&k, &partition.cell(n, 1)?).map(|r| (r.trace, r.p_geq2_exact)))
                    .collect::<fockdpp_core::Result<_>>()
                    .stage("analyze")?
            }
            _ => (1..=annuli)
                .map(|n| {
                    let cell = partition.cell(n, 1)?;
                    let mass = poisson_mass(&ctx.rf, &cell)?;
                    fockdpp_core::spectra::poisson_cell_prob(mass).map(|p| (mass, p.p_geq2_exact))
                })
                .collect::<fockdpp_core::Result<_>>()
                .stage("analyze")?,
        };
        let samples = stats.samples as f64;
        let mut misses = Vec::new();
        for cell in partition.cells() {
            let key = cell.index().expect("grid cells are indexed");
            let (expected_mean, expected_p_geq2) = expected[key.0 as usize - 1];
            let row = CellCountRow {
                n: key.0,
                k: key.1,
                mean: stats.mean(key),
                variance: stats.variance(key),
                p_geq2_empirical: stats.p_geq2(key),
                expected_mean,
                expected_p_geq2,
            };
            if samples * expected_p_geq2 >= 50.0 {
                let se = (expected_p_geq2 * (1.0 - expected_p_geq2) / samples).sqrt();
                if (row.p_geq2_empirical - expected_p_geq2).abs() > 3.0 * se {
                    misses.push(format!("({}, {})", key.0, key.1));
                }
            }
            rows.push(row);
        }
        if c.check {
            b.check(
                format!("analyze/{}/p_geq2", crate::formats::prefix(tag)),
                misses.is_empty(),
                format!("cells beyond 3 SE: {misses:?}"),
            );
        }
    } else {
        b.skip("analyze", "cell counts", format!("sample window {radius} holds no annulus of scale {scale}"));
    }
    b.write_csv(&format!("scatter/counts_{}.csv", crate::formats::prefix(tag)), rows)?;

    let density_radii: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|f| f * radius / 4.0).collect();
    let density = upper_density(&configs[0], &density_radii).stage("analyze")?;
    let ghosh = match tag {
        ProcessTag::Dpp if annuli >= 2 => {
            let partition = CellPartition::standard(scale, annuli).stage("analyze")?;
            let pairs: Vec<(Cell, Cell)> = (2..=annuli.min(21))
                .map(|n| Ok((partition.cell(n, 1)?, partition.cell(n, 2)?)))
                .collect::<fockdpp_core::Result<_>>()
                .stage("analyze")?;
            let report = ghosh_test(configs, &pairs, 1).stage("analyze")?;
            if c.check {
                b.check("analyze/ghosh", report.pass, format!("worst excess {:e}", report.worst_excess));
            }
            Some(report)
        }
        _ => None,
    };
    b.write_json(
        &format!("reports/analyze_{}.json", crate::formats::prefix(tag)),
        AnalyzeReport {
            process: tag,
            samples: configs.len(),
            metric: c.metric,
            median_min_gap_euclidean: median(&eu),
            median_min_gap_dk: dk.map(|v| median(&v)),
            pooled_gap_quantiles,
            count_scale: scale,
            count_annuli: annuli,
            density,
            ghosh,
        },
    )
}

/// ∫_cell ρ⁻² dm by radial Gauss–Legendre panels; ρ is radial.
fn poisson_mass(rf: &RadiusField, cell: &Cell) -> fockdpp_core::Result<f64> {
    let fockdpp_core::spectra::CellKind::AnnularSector { n, k: _, scale } = cell.kind else {
        return Err(fockdpp_core::Error::InvalidParameter("sector cell expected".into()));
    };
    let (a, bnd) = ((n as f64 - 1.0) * scale, n as f64 * scale);
    let arc = cell.area() / (0.5 * (bnd * bnd - a * a));
    let rule = fockdpp_core::quad::GaussLegendre::new(16);
    let mut total = 0.0;
    for (r, w) in rule.composite(a, bnd, 8) {
        total += w * r * rf.rho_at_radius(r)?.powi(-2);
    }
    Ok(arc * total)
}

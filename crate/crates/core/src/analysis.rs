//! Separation statistics, cell counts, scaling regressions, Borel–Cantelli
//! sums, the upper-density estimator and the negative-association test.

use alloc::collections::BTreeMap;
use core::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::kernel::TruncatedKernel;
use crate::prelude::*;
use crate::samplers::{PointConfiguration, ProcessTag, Window};
use crate::spectra::{Cell, CellPartition, CellRecord};
use crate::weights::{ols, RadiusField};
use crate::{Error, Result};

/// Quantile levels reported for nearest-neighbour distances.
pub const GAP_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Nearest-rank quantile of a sorted sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_sorted(&v, 0.5)
}

/// Uniform bucket grid over the bounding box of a point set.
struct BucketGrid {
    x0: f64,
    y0: f64,
    h: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl BucketGrid {
    fn new(points: &[Complex64], h: f64) -> Self {
        let x0 = points.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        let y0 = points.iter().map(|z| z.im).fold(f64::INFINITY, f64::min);
        let x1 = points.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        let y1 = points.iter().map(|z| z.im).fold(f64::NEG_INFINITY, f64::max);
        let nx = (((x1 - x0) / h) as usize + 1).max(1);
        let ny = (((y1 - y0) / h) as usize + 1).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        let mut grid = Self { x0, y0, h, nx, ny, buckets: Vec::new() };
        for (i, z) in points.iter().enumerate() {
            let (cx, cy) = grid.coords(*z);
            buckets[cy * nx + cx].push(i);
        }
        grid.buckets = buckets;
        grid
    }

    fn coords(&self, z: Complex64) -> (usize, usize) {
        let cx = (((z.re - self.x0) / self.h) as usize).min(self.nx - 1);
        let cy = (((z.im - self.y0) / self.h) as usize).min(self.ny - 1);
        (cx, cy)
    }

    /// Indices in the square ring at Chebyshev distance `r` around (cx, cy).
    fn ring(&self, cx: usize, cy: usize, r: usize, out: &mut Vec<usize>) {
        out.clear();
        let (cx, cy, r) = (cx as i64, cy as i64, r as i64);
        for y in cy - r..=cy + r {
            if y < 0 || y >= self.ny as i64 {
                continue;
            }
            let on_edge = y == cy - r || y == cy + r;
            let mut x = cx - r;
            while x <= cx + r {
                if x >= 0 && x < self.nx as i64 {
                    out.extend_from_slice(&self.buckets[y as usize * self.nx + x as usize]);
                }
                x += if on_edge || r == 0 { 1 } else { 2 * r };
            }
        }
    }
}

/// Euclidean distance from each point to its nearest other point
/// (infinity for a single point).
pub fn nearest_neighbor_distances(points: &[Complex64]) -> Vec<f64> {
    let n = points.len();
    if n < 2 {
        return vec![f64::INFINITY; n];
    }
    let x0 = points.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    let x1 = points.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let y0 = points.iter().map(|z| z.im).fold(f64::INFINITY, f64::min);
    let y1 = points.iter().map(|z| z.im).fold(f64::NEG_INFINITY, f64::max);
    let extent = (x1 - x0).max(y1 - y0).max(1e-300);
    let h = (extent / (n as f64).sqrt()).max(extent * 1e-6);
    let grid = BucketGrid::new(points, h);
    let max_ring = grid.nx.max(grid.ny);
    let mut buf = Vec::new();
    points
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let (cx, cy) = grid.coords(*z);
            let mut best = f64::INFINITY;
            for r in 0..=max_ring {
                grid.ring(cx, cy, r, &mut buf);
                for &j in &buf {
                    if j != i {
                        best = best.min((points[j] - z).norm());
                    }
                }
                // everything beyond ring r is at least r·h away
                if best <= r as f64 * h {
                    break;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub min_gap_euclidean: f64,
    /// Minimum of d_K over pairs; `None` without a kernel.
    pub min_gap_dk: Option<f64>,
    /// Quantiles of the nearest-neighbour distance multiset.
    pub gap_quantiles: Vec<(f64, f64)>,
    pub window: Window,
    pub n_points: usize,
    pub process: ProcessTag,
}

/// Exact minimum gaps of a configuration.
///
/// The Euclidean gap uses a bucket grid; the d_K gap is an exact minimum
/// over all pairs and needs every point inside the kernel window.
pub fn min_gap(config: &PointConfiguration, kernel: Option<&TruncatedKernel>) -> Result<SeparationReport> {
    let nn = nearest_neighbor_distances(&config.points);
    let mut sorted = nn.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let min_gap_euclidean = sorted.first().copied().unwrap_or(f64::INFINITY);
    let gap_quantiles = if config.points.len() < 2 {
        Vec::new()
    } else {
        GAP_QUANTILES.iter().map(|&q| (q, quantile_sorted(&sorted, q))).collect()
    };
    let min_gap_dk = match kernel {
        Some(k) => Some(min_gap_dk(k, &config.points)?),
        None => None,
    };
    Ok(SeparationReport {
        min_gap_euclidean,
        min_gap_dk,
        gap_quantiles,
        window: config.window,
        n_points: config.points.len(),
        process: config.process,
    })
}

/// min_{i≠j} d_K(z_i, z_j), with d_K = √(1 − |K(z,ζ)|²/(K(z,z)K(ζ,ζ))).
///
/// 1 − |G_ij|² from the Gram matrix of unit feature vectors screens the
/// pairs; those within rounding of the screened minimum are re-evaluated as
/// the norm of a residual, which keeps full relative accuracy.
pub fn min_gap_dk(k: &TruncatedKernel, points: &[Complex64]) -> Result<f64> {
    /// Bound on the rounding error of 1 − |G_ij|².
    const SCREEN_SLACK: f64 = 1e-10;
    const GRAM_CHUNK: usize = 512;
    if points.len() < 2 {
        return Ok(f64::INFINITY);
    }
    let mut unit = Vec::with_capacity(points.len());
    for z in points {
        k.check_window(*z)?;
        let (v, _) = k.basis.features(*z);
        let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        unit.push(v.into_iter().map(|c| c / norm).collect::<Vec<_>>());
    }
    let (n, rank) = (unit.len(), unit[0].len());
    let u = DMatrix::<Complex64>::from_fn(n, rank, |i, j| unit[i][j]);
    let ut = u.adjoint();
    let mut lowest = f64::INFINITY;
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for start in (0..n).step_by(GRAM_CHUNK) {
        let end = (start + GRAM_CHUNK).min(n);
        let block = u.rows(start, end - start) * &ut;
        for i in start..end {
            for j in 0..i {
                let v = 1.0 - block[(i - start, j)].norm_sqr();
                if v <= lowest + SCREEN_SLACK {
                    lowest = lowest.min(v);
                    candidates.push((v, i, j));
                }
            }
        }
    }
    let mut best = f64::INFINITY;
    for &(v, i, j) in &candidates {
        if v <= lowest + SCREEN_SLACK {
            let c: Complex64 = unit[j].iter().zip(&unit[i]).map(|(a, b)| a.conj() * b).sum();
            let d2: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| (a - c * b).norm_sqr()).sum();
            best = best.min(d2.sqrt());
        }
    }
    Ok(best.min(1.0))
}

/// X_{n,k} for every cell of the partition.
pub fn cell_counts(config: &PointConfiguration, partition: &CellPartition) -> Result<BTreeMap<(u32, u32), usize>> {
    let mut counts: BTreeMap<(u32, u32), usize> =
        partition.cells().iter().filter_map(|c| c.index()).map(|i| (i, 0)).collect();
    for z in &config.points {
        let idx = partition.locate(*z).ok_or(Error::Coverage { re: z.re, im: z.im })?;
        *counts.entry(idx).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Whether two points share a cell of the standard or the shifted grid.
pub fn co_occupied(z: Complex64, w: Complex64, standard: &CellPartition, shifted: &CellPartition) -> bool {
    let same = |p: &CellPartition| matches!((p.locate(z), p.locate(w)), (Some(a), Some(b)) if a == b);
    same(standard) || same(shifted)
}

/// Per-cell count statistics accumulated over a batch of configurations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CountStatistics {
    pub samples: usize,
    /// (Σ X, Σ X², #{X ≥ 2}) per cell.
    pub cells: BTreeMap<(u32, u32), (f64, f64, usize)>,
}

impl CountStatistics {
    pub fn add(&mut self, counts: &BTreeMap<(u32, u32), usize>) {
        self.samples += 1;
        for (&key, &c) in counts {
            let e = self.cells.entry(key).or_insert((0.0, 0.0, 0));
            e.0 += c as f64;
            e.1 += (c * c) as f64;
            e.2 += (c >= 2) as usize;
        }
    }

    /// Order-independent merge of two batches.
    pub fn merge(&mut self, other: &CountStatistics) {
        self.samples += other.samples;
        for (&key, &(s, s2, g)) in &other.cells {
            let e = self.cells.entry(key).or_insert((0.0, 0.0, 0));
            e.0 += s;
            e.1 += s2;
            e.2 += g;
        }
    }

    pub fn mean(&self, key: (u32, u32)) -> f64 {
        self.cells.get(&key).map_or(0.0, |e| e.0 / self.samples as f64)
    }

    /// Unbiased sample variance.
    pub fn variance(&self, key: (u32, u32)) -> f64 {
        let n = self.samples as f64;
        self.cells.get(&key).map_or(0.0, |e| (e.1 - e.0 * e.0 / n) / (n - 1.0))
    }

    /// P̂(X ≥ 2).
    pub fn p_geq2(&self, key: (u32, u32)) -> f64 {
        self.cells.get(&key).map_or(0.0, |e| e.2 as f64 / self.samples as f64)
    }
}

/// Which per-cell quantity a regression uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellQuantity {
    PGeq2Exact,
    PoissonPGeq2,
    Trace,
    Lambda1Lb,
    Lambda2Lb,
}

impl CellQuantity {
    pub fn of(self, r: &CellRecord) -> f64 {
        match self {
            CellQuantity::PGeq2Exact => r.p_geq2_exact,
            CellQuantity::PoissonPGeq2 => r.poisson_p_geq2,
            CellQuantity::Trace => r.trace,
            CellQuantity::Lambda1Lb => r.lambda1_lb,
            CellQuantity::Lambda2Lb => r.lambda2_lb,
        }
    }
}

/// Inclusion rule for regression cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellFilter {
    pub max_trace: f64,
    pub min_probability: f64,
    pub min_modulus: f64,
    pub max_modulus: f64,
}

impl Default for CellFilter {
    fn default() -> Self {
        Self { max_trace: 0.2, min_probability: 1e-14, min_modulus: 0.0, max_modulus: f64::INFINITY }
    }
}

impl CellFilter {
    pub fn accepts(&self, r: &CellRecord, value: f64) -> bool {
        r.trace <= self.max_trace
            && value >= self.min_probability
            && r.center_modulus >= self.min_modulus
            && r.center_modulus <= self.max_modulus
    }

    pub fn describe(&self) -> String {
        format!(
            "trace <= {}, value >= {:e}, |z| in [{}, {}]",
            self.max_trace, self.min_probability, self.min_modulus, self.max_modulus
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub gamma_expected: f64,
    pub cell_filter: String,
}

impl ScalingReport {
    /// OLS of `ys` on `xs`; at least ten pairs.
    pub fn fit(xs: Vec<f64>, ys: Vec<f64>, gamma_expected: f64, cell_filter: String) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::InvalidParameter("xs and ys differ in length".into()));
        }
        if xs.len() < 10 {
            return Err(Error::InsufficientData(format!("{} cells pass the filter; 10 are needed", xs.len())));
        }
        let (slope, intercept, r_squared) = ols(&xs, &ys);
        Ok(Self { xs, ys, slope, intercept, r_squared, gamma_expected, cell_filter })
    }
}

/// OLS of ln(quantity) on ln ρ(z_{n,k}) over the cells passing `filter`.
pub fn scaling_regression(
    records: &[CellRecord],
    quantity: CellQuantity,
    gamma_expected: f64,
    filter: &CellFilter,
) -> Result<ScalingReport> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in records {
        let v = quantity.of(r);
        if filter.accepts(r, v) && v > 0.0 {
            xs.push(r.rho_center.ln());
            ys.push(v.ln());
        }
    }
    ScalingReport::fit(xs, ys, gamma_expected, format!("{:?}: {}", quantity, filter.describe()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BorelCantelli {
    pub gamma: f64,
    /// S(n) = Σ_{m ≤ n} Σ_k ρ(z_{m,k})^(−γ), n = 1..=n_max.
    pub partial_sums: Vec<f64>,
    /// ∫_{|z|<n} ρ^(−γ) dm for n = 10..=n_max.
    pub integrals: Vec<f64>,
    pub matches_integral: bool,
    /// Fitted exponent of the increments S(n) − S(n−1) over the upper half.
    pub increment_exponent: f64,
    /// Increments decay faster than 1/n.
    pub converging: bool,
}

/// Partial Borel–Cantelli sums over the scale-1 grid.
pub fn borel_cantelli_sum(rf: &RadiusField, gamma: f64, n_max: u32) -> Result<BorelCantelli> {
    if n_max < 10 {
        return Err(Error::InvalidParameter(format!("n_max must be at least 10, got {n_max}")));
    }
    let mut partial_sums = Vec::with_capacity(n_max as usize);
    let mut increments = Vec::with_capacity(n_max as usize);
    let mut acc = 0.0;
    for n in 1..=n_max {
        // ρ is radial, so all n cells of annulus n share one summand
        let rho = rf.rho_at_radius(n as f64 - 0.5)?;
        let inc = n as f64 * rho.powf(-gamma);
        acc += inc;
        increments.push(inc);
        partial_sums.push(acc);
    }
    let mut integrals = Vec::new();
    let mut matches_integral = true;
    for n in 10..=n_max {
        let integral = rf.integral_rho_power(gamma, n as f64)?.partial_integral;
        let ratio = partial_sums[n as usize - 1] / integral;
        matches_integral &= (0.1..=10.0).contains(&ratio);
        integrals.push(integral);
    }
    let lo = (n_max / 2) as usize;
    let xs: Vec<f64> = (lo..n_max as usize).map(|i| ((i + 1) as f64).ln()).collect();
    let ys: Vec<f64> = increments[lo..].iter().map(|v| v.ln()).collect();
    let (increment_exponent, _, _) = ols(&xs, &ys);
    Ok(BorelCantelli {
        gamma,
        partial_sums,
        integrals,
        matches_integral,
        increment_exponent,
        converging: increment_exponent < -1.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub radii: Vec<f64>,
    /// sup over lattice centers of #(Λ ∩ D(z,r))/(πr²).
    pub sup_counts_over_area: Vec<f64>,
    pub extrapolated_upper_density: f64,
}

/// Upper-density estimate with centers on a square lattice of spacing r/4,
/// restricted to centers whose disk D(z, r) lies in the window.
pub fn upper_density(config: &PointConfiguration, radii: &[f64]) -> Result<DensityEstimate> {
    let (r_in, r_out) = (config.window.inner_radius(), config.window.outer_radius());
    let mut sup = Vec::with_capacity(radii.len());
    for &r in radii {
        if !(r > 0.0) {
            return Err(Error::InvalidParameter(format!("radius must be positive, got {r}")));
        }
        if 2.0 * r > r_out - r_in {
            return Err(Error::Window(format!("disks of radius {r} do not fit in {:?}", config.window)));
        }
        let h = r / 4.0;
        let m = (r_out / h).ceil() as i64;
        let grid = (!config.points.is_empty()).then(|| BucketGrid::new(&config.points, r));
        let mut buf = Vec::new();
        let mut best: Option<usize> = None;
        for i in -m..=m {
            for j in -m..=m {
                let c = Complex64::new(i as f64 * h, j as f64 * h);
                let d = c.norm();
                if d + r > r_out || d - r < r_in {
                    continue;
                }
                let count = match &grid {
                    None => 0,
                    Some(g) => {
                        let (cx, cy) = g.coords(c);
                        let mut n = 0;
                        for ring in 0..=1 {
                            g.ring(cx, cy, ring, &mut buf);
                            n += buf.iter().filter(|&&i| (config.points[i] - c).norm() < r).count();
                        }
                        n
                    }
                };
                best = Some(best.map_or(count, |b| b.max(count)));
            }
        }
        let best = best.ok_or_else(|| Error::Window(format!("no lattice center fits radius {r}")))?;
        sup.push(best as f64 / (PI * r * r));
    }
    Ok(DensityEstimate {
        radii: radii.to_vec(),
        extrapolated_upper_density: sup.last().copied().unwrap_or(0.0),
        sup_counts_over_area: sup,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhoshPair {
    pub joint: f64,
    pub product: f64,
    pub excess: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhoshReport {
    pub pairs: Vec<GhoshPair>,
    pub worst_excess: f64,
    pub pass: bool,
}

/// Empirical check of P(N(A) ≤ m, N(B) ≤ m) ≤ P(N(A) ≤ m)·P(N(B) ≤ m).
///
/// The standard error pools the binomial variances of the joint and the
/// product estimates; a pair passes when its excess is at most 3 SE.
pub fn ghosh_test(batches: &[PointConfiguration], pairs: &[(Cell, Cell)], m: usize) -> Result<GhoshReport> {
    for (a, b) in pairs {
        if !a.is_disjoint_from(b) {
            return Err(Error::NotDisjoint(format!("{:?}", a.kind), format!("{:?}", b.kind)));
        }
    }
    if batches.is_empty() {
        return Err(Error::InsufficientData("no batches".into()));
    }
    let n = batches.len() as f64;
    let mut out = Vec::with_capacity(pairs.len());
    let mut pass = true;
    for (a, b) in pairs {
        let (mut ja, mut jb, mut jab) = (0usize, 0usize, 0usize);
        for c in batches {
            let ea = c.count_in(|z| a.contains(z)) <= m;
            let eb = c.count_in(|z| b.contains(z)) <= m;
            ja += ea as usize;
            jb += eb as usize;
            jab += (ea && eb) as usize;
        }
        let joint = jab as f64 / n;
        let product = (ja as f64 / n) * (jb as f64 / n);
        let se = ((joint * (1.0 - joint) + product * (1.0 - product)) / n).sqrt();
        let excess = joint - product;
        pass &= excess <= 3.0 * se;
        out.push(GhoshPair { joint, product, excess, se });
    }
    let worst_excess = out.iter().map(|p| p.excess).fold(f64::NEG_INFINITY, f64::max);
    Ok(GhoshReport { pairs: out, worst_excess, pass })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    /// Asymptotic Kolmogorov p-value.
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov statistic sup|F_a − F_b|.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("KS test needs two nonempty samples".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.partial_cmp(q).unwrap());
    y.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * if k % 2 == 1 { 1.0 } else { -1.0 } * (-2.0 * kf * kf * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    Ok(KsResult { statistic: d, p_value: p.clamp(0.0, 1.0) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::Cell;
    use crate::weights::Weight;

    fn config(points: Vec<Complex64>, radius: f64) -> PointConfiguration {
        PointConfiguration {
            points,
            window: Window::Disk { radius },
            process: ProcessTag::Dpp,
            seed: 0,
            kernel_rank: None,
        }
    }

    #[test]
    fn min_gap_examples() {
        let r = min_gap(&config(vec![Complex64::new(0.0, 0.0), Complex64::new(3.0, 4.0)], 10.0), None).unwrap();
        assert_eq!(r.min_gap_euclidean, 5.0);
        let r = min_gap(&config(vec![Complex64::new(1.0, 0.0)], 10.0), None).unwrap();
        assert_eq!(r.min_gap_euclidean, f64::INFINITY);
        assert!(r.gap_quantiles.is_empty());
    }

    #[test]
    fn nearest_neighbors_match_brute_force() {
        let pts: Vec<Complex64> = (0..300)
            .map(|i| {
                let f = i as f64;
                Complex64::new((f * 0.7548776662).fract() * 10.0, (f * 0.5698402910).fract() * 3.0)
            })
            .collect();
        let nn = nearest_neighbor_distances(&pts);
        for (i, z) in pts.iter().enumerate() {
            let brute = pts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, w)| (w - z).norm())
                .fold(f64::INFINITY, f64::min);
            assert_eq!(nn[i], brute);
        }
        let r = min_gap(&config(pts, 20.0), None).unwrap();
        assert!(r.gap_quantiles.iter().all(|(_, v)| *v >= r.min_gap_euclidean));
    }

    #[test]
    fn dk_gap_of_close_pair_scales_with_distance() {
        let rf = RadiusField::new(Weight::power(2.0).unwrap());
        let k = TruncatedKernel::for_window(&rf, 4.0, 1e-12).unwrap();
        let h = 1e-3;
        let pts = [Complex64::new(1.0, 0.0), Complex64::new(1.0 + h, 0.0), Complex64::new(-2.0, 1.0)];
        let g = min_gap_dk(&k, &pts).unwrap();
        // d_K = √(1 − e^{−2h²}) for the Gaussian weight
        let exact = (-(-2.0 * h * h).exp_m1()).sqrt();
        assert!((g - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn cell_count_examples() {
        let p = CellPartition::standard(1.0, 8).unwrap();
        let counts = cell_counts(&config(Vec::new(), 8.0), &p).unwrap();
        assert_eq!(counts.len(), p.len());
        assert!(counts.values().all(|&c| c == 0));
        let z = Cell::sector(5, 2, 1.0).unwrap().center_point;
        let counts = cell_counts(&config(vec![z], 8.0), &p).unwrap();
        assert_eq!(counts[&(5, 2)], 1);
        assert_eq!(counts.values().sum::<usize>(), 1);
        let err = cell_counts(&config(vec![Complex64::new(9.0, 0.0)], 10.0), &p);
        assert!(matches!(err, Err(Error::Coverage { .. })));
    }

    #[test]
    fn close_pairs_share_a_cell_except_on_the_corner() {
        let standard = CellPartition::standard(1.0, 40).unwrap();
        let shifted = CellPartition::shifted(1.0, 40).unwrap();
        let mut flagged = 0;
        let total = 2000;
        for i in 0..total {
            let f = i as f64;
            let z =
                Complex64::from_polar(1.0 + 30.0 * (f * 0.7548776662).fract(), 2.0 * PI * (f * 0.5698402910).fract());
            let w = z + Complex64::from_polar(0.24 * (f * 0.381966).fract(), 2.0 * PI * (f * 0.127).fract());
            flagged += co_occupied(z, w, &standard, &shifted) as usize;
        }
        assert!(flagged as f64 >= 0.99 * total as f64, "{flagged}");
        // a pair straddling a standard annulus edge and a shifted angular edge
        let z = Complex64::from_polar(4.95, 2.0 * PI * 0.099);
        let w = Complex64::from_polar(5.05, 2.0 * PI * 0.101);
        assert!((z - w).norm() < 0.25);
        assert!(!co_occupied(z, w, &standard, &shifted));
    }

    #[test]
    fn count_statistics_merge_is_order_independent() {
        let a: BTreeMap<(u32, u32), usize> = [((1, 1), 2), ((2, 1), 0)].into_iter().collect();
        let b: BTreeMap<(u32, u32), usize> = [((1, 1), 1), ((2, 1), 3)].into_iter().collect();
        let mut s1 = CountStatistics::default();
        s1.add(&a);
        let mut s2 = CountStatistics::default();
        s2.add(&b);
        let mut left = s1.clone();
        left.merge(&s2);
        let mut right = s2.clone();
        right.merge(&s1);
        assert_eq!(left, right);
        assert_eq!(left.mean((1, 1)), 1.5);
        assert_eq!(left.p_geq2((2, 1)), 0.5);
    }

    fn record(rho: f64, p: f64) -> CellRecord {
        CellRecord {
            n: 1,
            k: 1,
            scale: 1.0,
            center_modulus: 1.0,
            rho_center: rho,
            trace: 0.01,
            hs_norm_sq: 0.0,
            p0: 1.0,
            p1: 0.0,
            p_geq2_exact: p,
            p_geq2_second_order: p,
            lambda1_lb: 0.0,
            lambda2_lb: 0.0,
            lambda1: 0.0,
            lambda2: 0.0,
            poisson_p_geq2: 0.0,
            band: 1,
        }
    }

    #[test]
    fn regression_recovers_exact_power_law() {
        let recs: Vec<CellRecord> = (1..=20)
            .map(|i| {
                let rho = 1.0 + i as f64 * 0.1;
                record(rho, rho.powi(-6))
            })
            .collect();
        let r = scaling_regression(&recs, CellQuantity::PGeq2Exact, 6.0, &CellFilter::default()).unwrap();
        assert!((r.slope + 6.0).abs() < 1e-12);
        assert!((r.r_squared - 1.0).abs() < 1e-12);
        let few = &recs[..5];
        assert!(matches!(
            scaling_regression(few, CellQuantity::PGeq2Exact, 6.0, &CellFilter::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn borel_cantelli_examples() {
        let rf = RadiusField::new(Weight::power(2.0).unwrap());
        let bc = borel_cantelli_sum(&rf, 6.0, 50).unwrap();
        let c = (4.0 * PI).powi(3);
        for (i, s) in bc.partial_sums.iter().enumerate() {
            let n = (i + 1) as f64;
            assert!((s - c * n * (n + 1.0) / 2.0).abs() < 1e-6 * s);
        }
        assert!(bc.matches_integral);
        let rf = RadiusField::new(Weight::power(1.2).unwrap());
        assert!(borel_cantelli_sum(&rf, 6.0, 200).unwrap().converging);
        let rf = RadiusField::new(Weight::power(1.5).unwrap());
        let bc = borel_cantelli_sum(&rf, 6.0, 200).unwrap();
        assert!(!bc.converging);
        assert!(bc.matches_integral);
    }

    #[test]
    fn upper_density_examples() {
        let mut pts = Vec::new();
        for i in -60..=60 {
            for j in -60..=60 {
                let z = Complex64::new(i as f64, j as f64);
                if z.norm() <= 60.0 {
                    pts.push(z);
                }
            }
        }
        let c = config(pts.clone(), 60.0);
        let d = upper_density(&c, &[20.0]).unwrap();
        assert!((d.extrapolated_upper_density - 1.0).abs() < 0.1);
        // unit-separated set: at most 4 per unit area for r ≥ 1
        let d = upper_density(&c, &[1.0, 2.0, 5.0]).unwrap();
        assert!(d.sup_counts_over_area.iter().all(|&v| v <= 4.0));
        assert!(matches!(upper_density(&c, &[40.0]), Err(Error::Window(_))));
    }

    #[test]
    fn ghosh_examples() {
        let a = Cell::sector(3, 1, 1.0).unwrap();
        let b = Cell::sector(3, 2, 1.0).unwrap();
        // two independent Bernoulli(½) cells, all four outcomes once
        let (za, zb) = (a.center_point, b.center_point);
        let batches: Vec<PointConfiguration> =
            [vec![], vec![za], vec![zb], vec![za, zb]].into_iter().map(|p| config(p, 5.0)).collect();
        let r = ghosh_test(&batches, &[(a, b)], 0).unwrap();
        assert!(r.pairs[0].joint <= r.pairs[0].product);
        assert!(r.pass);
        assert!(matches!(ghosh_test(&batches, &[(a, a)], 0), Err(Error::NotDisjoint(..))));
    }

    #[test]
    fn ks_examples() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        let b: Vec<f64> = (0..100).map(|i| i as f64 + 1000.0).collect();
        assert_eq!(ks_two_sample(&a, &b).unwrap().statistic, 1.0);
        let c: Vec<f64> = (0..100).map(|i| i as f64 + 50.0).collect();
        assert!((ks_two_sample(&a, &c).unwrap().statistic - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quantiles_use_nearest_rank() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.0);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
    }
}

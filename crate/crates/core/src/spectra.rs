//! Cells, Galerkin matrices of the restriction operator and the Bernoulli
//! eigenvalues that govern cell counts.
//!
//! In the monomial basis e_m = z^m/√c_m the restriction of the kernel to a
//! cell has entries ∫_cell e_m ē_n dμ_φ. For cells bounded by arcs about the
//! origin the angular integral is explicit, so each entry is a radial
//! integral times e^{i(m−n)θ_c}·S_{m−n}, with S_d = 2 sin(dw/2)/d. Conjugating
//! by diag(e^{imθ_c}) removes the phases and leaves a real symmetric matrix
//! with the same spectrum.

use core::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::kernel::TruncatedKernel;
use crate::prelude::*;
use crate::quad::GaussLegendre;
use crate::weights::arc_inside_disk;
use crate::{Error, Result};

/// Basis functions whose mass in the cell is below this are dropped.
pub const DIAG_FLOOR: f64 = 1e-17;
/// Eigenvalues further than this outside [0, 1] are reported as errors.
pub const PSD_SLACK: f64 = 1e-6;

const RADIAL_NODES: usize = 24;
const MAX_PANELS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CellKind {
    /// T^s_{n,k}: (n−1)s ≤ r < ns, θ/2π ∈ [(k−1)/c_n, k/c_n).
    AnnularSector {
        n: u32,
        k: u32,
        scale: f64,
    },
    /// T̃^s_{n,k}: (n−½)s ≤ r < (n+½)s, θ/2π ∈ [(k−½)/c_n, (k+½)/c_n);
    /// `n = 0` is the central disk D(0, s/2).
    ShiftedAnnularSector {
        n: u32,
        k: u32,
        scale: f64,
    },
    Disk {
        center: Complex64,
        radius: f64,
    },
}

/// Number of angular cells in annulus `n` of a grid with the given scale:
/// `n` for scale ≥ 1 and `l·n` for scale 1/l.
pub fn angular_count(n: u32, scale: f64) -> u32 {
    if n == 0 {
        1
    } else if scale >= 1.0 {
        n
    } else {
        (n as f64 / scale - 1e-9).ceil() as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub kind: CellKind,
    pub center_point: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Geometry {
    Sector { r0: f64, r1: f64, theta0: f64, width: f64 },
    Disk { center: Complex64, radius: f64 },
}

fn check_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("grid scale must be positive, got {scale}")))
    }
}

impl Cell {
    pub fn sector(n: u32, k: u32, scale: f64) -> Result<Self> {
        check_scale(scale)?;
        let c = angular_count(n, scale);
        if n == 0 || k == 0 || k > c {
            return Err(Error::InvalidParameter(format!("no cell ({n}, {k}) at scale {scale}")));
        }
        let center = Complex64::from_polar((n as f64 - 0.5) * scale, 2.0 * PI * (k as f64 - 0.5) / c as f64);
        Ok(Self { kind: CellKind::AnnularSector { n, k, scale }, center_point: center })
    }

    pub fn shifted(n: u32, k: u32, scale: f64) -> Result<Self> {
        check_scale(scale)?;
        let c = angular_count(n, scale);
        if k == 0 || k > c {
            return Err(Error::InvalidParameter(format!("no shifted cell ({n}, {k}) at scale {scale}")));
        }
        let center = if n == 0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::from_polar(n as f64 * scale, 2.0 * PI * k as f64 / c as f64)
        };
        Ok(Self { kind: CellKind::ShiftedAnnularSector { n, k, scale }, center_point: center })
    }

    pub fn disk(center: Complex64, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::InvalidParameter(format!("disk radius must be nonnegative, got {radius}")));
        }
        Ok(Self { kind: CellKind::Disk { center, radius }, center_point: center })
    }

    /// Grid index (n, k), if the cell belongs to a grid.
    pub fn index(&self) -> Option<(u32, u32)> {
        match self.kind {
            CellKind::AnnularSector { n, k, .. } | CellKind::ShiftedAnnularSector { n, k, .. } => Some((n, k)),
            CellKind::Disk { .. } => None,
        }
    }

    fn geometry(&self) -> Geometry {
        match self.kind {
            CellKind::AnnularSector { n, k, scale } => {
                let c = angular_count(n, scale) as f64;
                Geometry::Sector {
                    r0: (n as f64 - 1.0) * scale,
                    r1: n as f64 * scale,
                    theta0: 2.0 * PI * (k as f64 - 1.0) / c,
                    width: 2.0 * PI / c,
                }
            }
            CellKind::ShiftedAnnularSector { n: 0, scale, .. } => {
                Geometry::Disk { center: Complex64::new(0.0, 0.0), radius: 0.5 * scale }
            }
            CellKind::ShiftedAnnularSector { n, k, scale } => {
                let c = angular_count(n, scale) as f64;
                Geometry::Sector {
                    r0: (n as f64 - 0.5) * scale,
                    r1: (n as f64 + 0.5) * scale,
                    theta0: 2.0 * PI * (k as f64 - 0.5) / c,
                    width: 2.0 * PI / c,
                }
            }
            CellKind::Disk { center, radius } => Geometry::Disk { center, radius },
        }
    }

    /// Largest modulus of a point of the cell.
    pub fn max_modulus(&self) -> f64 {
        match self.geometry() {
            Geometry::Sector { r1, .. } => r1,
            Geometry::Disk { center, radius } => center.norm() + radius,
        }
    }

    pub fn area(&self) -> f64 {
        match self.geometry() {
            Geometry::Sector { r0, r1, width, .. } => 0.5 * width * (r1 * r1 - r0 * r0),
            Geometry::Disk { radius, .. } => PI * radius * radius,
        }
    }

    /// Half-open membership, matching the grid tiling.
    pub fn contains(&self, z: Complex64) -> bool {
        match self.geometry() {
            Geometry::Sector { r0, r1, theta0, width } => {
                let r = z.norm();
                if !(r >= r0 && r < r1) {
                    return false;
                }
                let mut d = wrap_angle(positive_angle(z) - theta0);
                if d >= 2.0 * PI {
                    d = 0.0;
                }
                d < width
            }
            Geometry::Disk { center, radius } => (z - center).norm() < radius,
        }
    }

    /// Whether two cells can share no point (conservative for disks).
    pub fn is_disjoint_from(&self, other: &Cell) -> bool {
        if self == other {
            return false;
        }
        match (self.geometry(), other.geometry()) {
            (
                Geometry::Sector { r0, r1, theta0, width },
                Geometry::Sector { r0: s0, r1: s1, theta0: p0, width: w1 },
            ) => {
                if r1 <= s0 || s1 <= r0 {
                    return true;
                }
                // angular intervals on the circle
                let a = wrap_angle(p0 - theta0);
                let b = wrap_angle(theta0 - p0);
                a >= width - 1e-12 && b >= w1 - 1e-12
            }
            (Geometry::Disk { center: c1, radius: q1 }, Geometry::Disk { center: c2, radius: q2 }) => {
                (c1 - c2).norm() >= q1 + q2
            }
            (Geometry::Disk { center, radius }, Geometry::Sector { r0, r1, .. })
            | (Geometry::Sector { r0, r1, .. }, Geometry::Disk { center, radius }) => {
                let m = center.norm();
                m + radius <= r0 || m - radius >= r1
            }
        }
    }
}

/// x reduced to [0, 2π].
fn wrap_angle(x: f64) -> f64 {
    let r = x % (2.0 * PI);
    if r < 0.0 {
        r + 2.0 * PI
    } else {
        r
    }
}

/// arg z in [0, 2π).
pub fn positive_angle(z: Complex64) -> f64 {
    let a = z.im.atan2(z.re);
    if a < 0.0 {
        let b = a + 2.0 * PI;
        if b >= 2.0 * PI {
            0.0
        } else {
            b
        }
    } else {
        a
    }
}

/// The annular-sector grid T^s (or its shifted version) up to annulus `n_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellPartition {
    pub scale: f64,
    pub shifted: bool,
    pub n_max: u32,
}

impl CellPartition {
    pub fn standard(scale: f64, n_max: u32) -> Result<Self> {
        check_scale(scale)?;
        Ok(Self { scale, shifted: false, n_max })
    }

    pub fn shifted(scale: f64, n_max: u32) -> Result<Self> {
        check_scale(scale)?;
        Ok(Self { scale, shifted: true, n_max })
    }

    /// Radius of the disk the partition tiles.
    pub fn outer_radius(&self) -> f64 {
        if self.shifted {
            (self.n_max as f64 + 0.5) * self.scale
        } else {
            self.n_max as f64 * self.scale
        }
    }

    pub fn cell(&self, n: u32, k: u32) -> Result<Cell> {
        if n > self.n_max {
            return Err(Error::InvalidParameter(format!("annulus {n} beyond n_max = {}", self.n_max)));
        }
        if self.shifted {
            Cell::shifted(n, k, self.scale)
        } else {
            Cell::sector(n, k, self.scale)
        }
    }

    /// All cells ordered by (n, k).
    pub fn cells(&self) -> Vec<Cell> {
        let first = if self.shifted { 0 } else { 1 };
        let mut out = Vec::new();
        for n in first..=self.n_max {
            for k in 1..=angular_count(n, self.scale) {
                out.push(self.cell(n, k).expect("enumerated cells are valid"));
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        let first = if self.shifted { 0 } else { 1 };
        (first..=self.n_max).map(|n| angular_count(n, self.scale) as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index (n, k) of the cell containing `z`, or `None` outside the grid.
    pub fn locate(&self, z: Complex64) -> Option<(u32, u32)> {
        let r = z.norm();
        let frac = positive_angle(z) / (2.0 * PI);
        let s = self.scale;
        if self.shifted {
            if r < 0.5 * s {
                return Some((0, 1));
            }
            let n = (r / s + 0.5).floor() as u32;
            if n == 0 || n > self.n_max {
                return None;
            }
            let c = angular_count(n, s);
            let mut k = (frac * c as f64 + 0.5).floor() as u32;
            if k == 0 {
                k = c;
            }
            Some((n, k.min(c)))
        } else {
            let n = (r / s).floor() as u32 + 1;
            if n > self.n_max {
                return None;
            }
            let c = angular_count(n, s);
            let k = ((frac * c as f64).floor() as u32 + 1).min(c);
            Some((n, k))
        }
    }
}

/// One radial quadrature node: radius, weight (including the Jacobian of
/// any substitution) and the angular width of the cell on that circle.
#[derive(Debug, Clone, Copy)]
struct RadialNode {
    t: f64,
    weight: f64,
    arc: f64,
}

fn split_at(a: f64, b: f64, point: Option<f64>) -> Vec<(f64, f64)> {
    match point {
        Some(p) if p > a && p < b => vec![(a, p), (p, b)],
        _ => vec![(a, b)],
    }
}

fn radial_nodes(geom: Geometry, kink: Option<f64>, panels: usize, rule: &GaussLegendre) -> Vec<RadialNode> {
    let mut out = Vec::new();
    match geom {
        Geometry::Sector { r0, r1, width, .. } => {
            for (a, b) in split_at(r0, r1, kink) {
                for (t, w) in rule.composite(a, b, panels) {
                    out.push(RadialNode { t, weight: w, arc: width });
                }
            }
        }
        Geometry::Disk { center, radius } => {
            let a = center.norm();
            if radius <= 0.0 {
                return out;
            }
            if radius > a {
                for (lo, hi) in split_at(0.0, radius - a, kink) {
                    for (t, w) in rule.composite(lo, hi, panels) {
                        out.push(RadialNode { t, weight: w, arc: 2.0 * PI });
                    }
                }
            }
            if a > 0.0 {
                // t = lo + (hi − lo)(1 − cos u)/2 absorbs the square-root ends
                let (lo, hi) = ((a - radius).abs(), a + radius);
                let half = 0.5 * (hi - lo);
                let u_kink =
                    kink.filter(|&k| k > lo && k < hi).map(|k| (1.0 - (k - lo) / half).clamp(-1.0, 1.0).acos());
                for (ua, ub) in split_at(0.0, PI, u_kink) {
                    for (u, w) in rule.composite(ua, ub, panels) {
                        let t = lo + half * (1.0 - u.cos());
                        if t <= 0.0 {
                            continue;
                        }
                        out.push(RadialNode { t, weight: w * half * u.sin(), arc: arc_inside_disk(t, a, radius) });
                    }
                }
            }
        }
    }
    out
}

/// S_d = ∫_{−w/2}^{w/2} e^{idθ} dθ.
fn arc_factor(d: i64, width: f64) -> f64 {
    if d == 0 {
        width
    } else if width >= 2.0 * PI {
        0.0
    } else {
        2.0 * (d as f64 * 0.5 * width).sin() / d as f64
    }
}

/// The Galerkin matrix of the restriction operator in real symmetric form.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionMatrix {
    pub cell: Cell,
    /// Rank N of the kernel.
    pub rank: usize,
    /// Basis indices kept (cell mass of e_m above [`DIAG_FLOOR`]).
    pub band: Vec<usize>,
    /// θ_c of the conjugation diag(e^{imθ_c}).
    pub phase_angle: f64,
    /// Band × band real symmetric matrix D*MD.
    pub matrix: DMatrix<f64>,
}

impl RestrictionMatrix {
    /// The full N×N Hermitian Galerkin matrix with entries ∫ e_m ē_n dμ_φ.
    pub fn to_hermitian(&self) -> DMatrix<Complex64> {
        let mut out = DMatrix::zeros(self.rank, self.rank);
        for (i, &m) in self.band.iter().enumerate() {
            for (j, &n) in self.band.iter().enumerate() {
                let phase = Complex64::from_polar(1.0, (m as f64 - n as f64) * self.phase_angle);
                out[(m, n)] = phase * self.matrix[(i, j)];
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diagonal().sum()
    }

    pub fn hs_norm_sq(&self) -> f64 {
        self.matrix.iter().map(|v| v * v).sum()
    }
}

/// Galerkin matrix M[m][n] = ∫_cell e_m ē_n dμ_φ.
///
/// Radial panels are doubled until the diagonal converges.
pub fn restriction_matrix(k: &TruncatedKernel, cell: &Cell) -> Result<RestrictionMatrix> {
    let reach = cell.max_modulus();
    if reach > k.window_radius * (1.0 + 1e-12) {
        return Err(Error::OutsideWindow { modulus: reach, radius: k.window_radius, bound: k.diag_error_bound });
    }
    let geom = cell.geometry();
    let phase_angle = match geom {
        Geometry::Sector { theta0, width, .. } => theta0 + 0.5 * width,
        Geometry::Disk { center, .. } => positive_angle(center),
    };
    let basis = &k.basis;
    let rank = basis.rank();
    let log_c = basis.log_moments();
    let kink = basis.rho_table().kink_radius();
    let rule = GaussLegendre::new(RADIAL_NODES);

    let diag_of = |nodes: &[RadialNode]| -> Vec<f64> {
        let mut diag = vec![0.0; rank];
        for node in nodes {
            let lt = node.t.ln();
            let base = basis.log_mu_density(node.t) + lt + node.weight.ln() + node.arc.ln();
            for (m, lc) in log_c.iter().enumerate() {
                let e = 2.0 * m as f64 * lt - lc + base;
                if e > -745.0 {
                    diag[m] += e.exp();
                }
            }
        }
        diag
    };

    let mut panels = 1;
    let mut nodes = radial_nodes(geom, kink, panels, &rule);
    let mut diag = diag_of(&nodes);
    loop {
        let finer_nodes = radial_nodes(geom, kink, 2 * panels, &rule);
        let finer = diag_of(&finer_nodes);
        let converged = diag.iter().zip(&finer).all(|(a, b)| (a - b).abs() <= 1e-15 + 1e-10 * b);
        panels *= 2;
        nodes = finer_nodes;
        diag = finer;
        if converged {
            break;
        }
        if panels >= MAX_PANELS {
            let residual = diag.iter().cloned().fold(0.0, f64::max);
            return Err(Error::Quadrature { residual });
        }
    }

    let band: Vec<usize> = (0..rank).filter(|&m| diag[m] > DIAG_FLOOR).collect();
    let b = band.len();
    let mut matrix = DMatrix::<f64>::zeros(b, b);
    if b > 0 {
        // G[q][i] = √(weight·μ-density·t) |e_{m_i}(t_q)|
        let mut g = DMatrix::<f64>::zeros(nodes.len(), b);
        for (q, node) in nodes.iter().enumerate() {
            let lt = node.t.ln();
            let base = 0.5 * (basis.log_mu_density(node.t) + lt + node.weight.ln());
            for (i, &m) in band.iter().enumerate() {
                let e = m as f64 * lt - 0.5 * log_c[m] + base;
                g[(q, i)] = if e > -745.0 { e.exp() } else { 0.0 };
            }
        }
        let uniform = nodes.windows(2).all(|w| w[0].arc == w[1].arc);
        if uniform {
            let width = nodes.first().map_or(0.0, |n| n.arc);
            let gram = g.transpose() * &g;
            for i in 0..b {
                for j in 0..b {
                    matrix[(i, j)] = gram[(i, j)] * arc_factor(band[i] as i64 - band[j] as i64, width);
                }
            }
        } else {
            let span = band[b - 1] - band[0];
            let mut factors = vec![0.0; span + 1];
            for (q, node) in nodes.iter().enumerate() {
                for (d, f) in factors.iter_mut().enumerate() {
                    *f = arc_factor(d as i64, node.arc);
                }
                let row = g.row(q);
                for i in 0..b {
                    let gi = row[i];
                    if gi == 0.0 {
                        continue;
                    }
                    for j in 0..=i {
                        let d = band[i] - band[j];
                        matrix[(i, j)] += gi * row[j] * factors[d];
                    }
                }
            }
            for i in 0..b {
                for j in 0..i {
                    matrix[(j, i)] = matrix[(i, j)];
                }
            }
        }
    }
    Ok(RestrictionMatrix { cell: *cell, rank, band, phase_angle, matrix })
}

/// Eigenvalues of the restriction operator and their moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictionSpectrum {
    pub cell: Option<Cell>,
    pub matrix_rank: usize,
    /// Descending, clamped to [0, 1].
    pub eigenvalues: Vec<f64>,
    /// Σλ, read off the matrix diagonal.
    pub trace: f64,
    /// Σλ², the squared Frobenius norm of the matrix.
    pub hs_norm_sq: f64,
}

fn finish_spectrum(
    cell: Option<Cell>,
    rank: usize,
    mut eigs: Vec<f64>,
    trace: f64,
    hs: f64,
) -> Result<RestrictionSpectrum> {
    for &v in &eigs {
        if !(-PSD_SLACK..=1.0 + PSD_SLACK).contains(&v) {
            return Err(Error::PsdViolation { value: v });
        }
    }
    eigs.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(RestrictionSpectrum { cell, matrix_rank: rank, eigenvalues: eigs, trace, hs_norm_sq: hs })
}

/// Spectrum of a restriction matrix.
pub fn spectrum(m: &RestrictionMatrix) -> Result<RestrictionSpectrum> {
    let eigs =
        if m.band.is_empty() { Vec::new() } else { m.matrix.clone().symmetric_eigenvalues().iter().copied().collect() };
    finish_spectrum(Some(m.cell), m.rank, eigs, m.trace(), m.hs_norm_sq())
}

/// Spectrum of an arbitrary Hermitian matrix (Hermitian within 1e-10).
pub fn spectrum_of_hermitian(m: &DMatrix<Complex64>) -> Result<RestrictionSpectrum> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::InvalidParameter("matrix must be square".into()));
    }
    let scale = m.iter().map(|v| v.norm()).fold(1.0, f64::max);
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in 0..=i {
            asym = asym.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    if asym > 1e-10 * scale {
        return Err(Error::NotHermitian { asymmetry: asym });
    }
    let trace = (0..n).map(|i| m[(i, i)].re).sum();
    let hs = m.iter().map(|v| v.norm_sqr()).sum();
    let eigs = if n == 0 { Vec::new() } else { m.clone().symmetric_eigenvalues().iter().copied().collect() };
    finish_spectrum(None, n, eigs, trace, hs)
}

/// Count probabilities of a sum of independent Bernoulli(λ_j) variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellProbabilities {
    pub p0: f64,
    pub p1: f64,
    pub p_geq2_exact: f64,
    pub p_geq2_second_order: f64,
    /// (Σλ)² − Σλ² = E[X(X−1)].
    pub pair_intensity: f64,
    pub expected_count: f64,
}

/// P(X = 0), P(X = 1), P(X ≥ 2) for X = Σ Bernoulli(λ_j).
///
/// The three-state recursion adds only nonnegative terms, so P(X ≥ 2) keeps
/// full relative precision even when it is far below P(X = 0).
pub fn cell_probabilities(s: &RestrictionSpectrum) -> CellProbabilities {
    bernoulli_probabilities(&s.eigenvalues)
}

pub fn bernoulli_probabilities(lambdas: &[f64]) -> CellProbabilities {
    let (mut q0, mut q1, mut q2) = (1.0, 0.0, 0.0);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for &l in lambdas {
        let l = l.clamp(0.0, 1.0);
        q2 += q1 * l;
        q1 = q1 * (1.0 - l) + q0 * l;
        q0 *= 1.0 - l;
        sum += l;
        sum_sq += l * l;
    }
    let pair = (sum * sum - sum_sq).max(0.0);
    CellProbabilities {
        p0: q0,
        p1: q1,
        p_geq2_exact: q2,
        p_geq2_second_order: 0.5 * pair,
        pair_intensity: pair,
        expected_count: sum,
    }
}

/// Count probabilities of a Poisson variable with mean `p`.
pub fn poisson_cell_prob(p: f64) -> Result<CellProbabilities> {
    if !(p >= 0.0) || !p.is_finite() {
        return Err(Error::InvalidParameter(format!("Poisson mean must be nonnegative, got {p}")));
    }
    let p0 = (-p).exp();
    let p1 = p * p0;
    let p2 = if p < 0.5 {
        // Σ_{k≥2} p^k/k! without cancellation
        let mut term = 0.5 * p * p;
        let mut acc = 0.0;
        let mut k = 2.0;
        while term > 1e-18 * acc || acc == 0.0 {
            acc += term;
            k += 1.0;
            term *= p / k;
            if term == 0.0 {
                break;
            }
        }
        p0 * acc
    } else {
        1.0 - p0 - p1
    };
    Ok(CellProbabilities {
        p0,
        p1,
        p_geq2_exact: p2,
        p_geq2_second_order: 0.5 * p * p,
        pair_intensity: p * p,
        expected_count: p,
    })
}

/// Certified lower bounds for λ₁ and λ₂ from the normalized reproducing
/// kernel 𝔎 at the cell center and g₂ = (z − z₀)/ρ(z₀)·𝔎.
pub fn lambda_witnesses(k: &TruncatedKernel, cell: &Cell) -> Result<(f64, f64)> {
    let m = restriction_matrix(k, cell)?;
    lambda_witnesses_from(k, &m)
}

/// As [`lambda_witnesses`], reusing an assembled matrix.
pub fn lambda_witnesses_from(k: &TruncatedKernel, m: &RestrictionMatrix) -> Result<(f64, f64)> {
    let z0 = m.cell.center_point;
    k.check_window(z0)?;
    if m.band.is_empty() {
        return Ok((0.0, 0.0));
    }
    let basis = &k.basis;
    let log_c = basis.log_moments();
    let n = basis.rank();
    let r0 = z0.norm();
    let rho0 = basis.rho(r0);
    // coefficients of 𝔎 in the conjugated basis
    let a: Vec<f64> = if r0 == 0.0 {
        (0..n).map(|i| if i == 0 { (-0.5 * log_c[0]).exp() / (-log_c[0]).exp().sqrt() } else { 0.0 }).collect()
    } else {
        let lk = k.log_diag(z0)?;
        let lr = r0.ln();
        (0..n)
            .map(|i| {
                let e = i as f64 * lr - 0.5 * log_c[i] - 0.5 * lk;
                if e > -745.0 {
                    e.exp()
                } else {
                    0.0
                }
            })
            .collect()
    };
    let b: Vec<f64> = (0..n)
        .map(|i| {
            let up = if i == 0 { 0.0 } else { (0.5 * (log_c[i] - log_c[i - 1])).exp() * a[i - 1] };
            (up - r0 * a[i]) / rho0
        })
        .collect();
    let av: Vec<f64> = m.band.iter().map(|&i| a[i]).collect();
    let bv: Vec<f64> = m.band.iter().map(|&i| b[i]).collect();
    let mat = &m.matrix;
    let form = |x: &[f64], y: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..x.len() {
            let mut row = 0.0;
            for j in 0..y.len() {
                row += mat[(i, j)] * y[j];
            }
            acc += x[i] * row;
        }
        acc
    };
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let na = dot(&av, &av);
    if na == 0.0 {
        return Ok((0.0, 0.0));
    }
    let lambda1 = form(&av, &av) / na;
    // orthonormal basis of span{a, b}
    let q1: Vec<f64> = av.iter().map(|v| v / na.sqrt()).collect();
    let proj = dot(&q1, &bv);
    let mut q2: Vec<f64> = bv.iter().zip(&q1).map(|(v, u)| v - proj * u).collect();
    let nq2 = dot(&q2, &q2).sqrt();
    if !(nq2 > 1e-300) {
        return Ok((lambda1, 0.0));
    }
    q2.iter_mut().for_each(|v| *v /= nq2);
    let h11 = form(&q1, &q1);
    let h22 = form(&q2, &q2);
    let h12 = form(&q1, &q2);
    let mean = 0.5 * (h11 + h22);
    let radius = (0.25 * (h11 - h22) * (h11 - h22) + h12 * h12).sqrt();
    let big = mean + radius;
    let det = h11 * h22 - h12 * h12;
    let lambda2 = if big > 0.0 { det / big } else { 0.0 };
    Ok((lambda1, lambda2.max(0.0)))
}

/// ∫_cell K(z,z) dμ_φ and ∬_{cell²} |K(z,ζ)|² dμ_φ dμ_φ by direct 2-D
/// cubature of the basis functions, independent of the Galerkin path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectIntegrals {
    pub trace: f64,
    pub hs_norm_sq: f64,
    pub points: usize,
}

/// Tensor cubature: Gauss–Legendre in r and θ about the origin for sectors,
/// Gauss–Legendre in s and the trapezoid rule in ψ about the center for
/// disks. The sector's angular rule is sized to the angular frequencies of
/// the retained basis functions; the radial (and for disks the angular)
/// resolution doubles until both integrals agree to 1e-9 between levels.
pub fn direct_cell_integrals(k: &TruncatedKernel, cell: &Cell) -> Result<DirectIntegrals> {
    let reach = cell.max_modulus();
    if reach > k.window_radius * (1.0 + 1e-12) {
        return Err(Error::OutsideWindow { modulus: reach, radius: k.window_radius, bound: k.diag_error_bound });
    }
    let rule = GaussLegendre::new(16);
    let kink = k.basis.rho_table().kink_radius();
    let mut prev: Option<DirectIntegrals> = None;
    for level in 1..=CUBATURE_LEVELS {
        let panels = 1usize << level;
        let current = match cell.geometry() {
            Geometry::Sector { r0, r1, theta0, width } => {
                let radial: Vec<(f64, f64)> =
                    split_at(r0, r1, kink).into_iter().flat_map(|(a, b)| rule.composite(a, b, panels)).collect();
                sector_cubature(k, &radial, theta0, width, &rule)
            }
            Geometry::Disk { center, radius } => {
                if radius <= 0.0 {
                    DirectIntegrals { trace: 0.0, hs_norm_sq: 0.0, points: 0 }
                } else {
                    let m = 32 * panels;
                    let mut pts = Vec::new();
                    for (s, ws) in rule.composite(0.0, radius, panels) {
                        for j in 0..m {
                            let psi = 2.0 * PI * j as f64 / m as f64;
                            pts.push((center + Complex64::from_polar(s, psi), ws * s * 2.0 * PI / m as f64));
                        }
                    }
                    point_cubature(k, &pts)
                }
            }
        };
        if let Some(p) = prev {
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs() || a == b;
            if close(p.trace, current.trace) && close(p.hs_norm_sq, current.hs_norm_sq) {
                return Ok(current);
            }
        }
        prev = Some(current);
    }
    let p = prev.expect("at least one level");
    Err(Error::Quadrature { residual: p.trace })
}

const CUBATURE_LEVELS: u32 = 7;
const CUBATURE_CHUNK: usize = 2048;

/// Columns whose cell mass exceeds this enter the Hilbert–Schmidt product.
const CUBATURE_FLOOR: f64 = 1e-22;

/// ln(|e_m(t)|² μ(t)) for all m.
fn log_feature_sq(k: &TruncatedKernel, t: f64) -> impl Iterator<Item = f64> + '_ {
    let lmu = k.basis.log_mu_density(t);
    let lt = t.ln();
    k.basis
        .log_moments()
        .iter()
        .enumerate()
        .map(move |(m, lc)| if m == 0 { lmu - lc } else { 2.0 * m as f64 * lt - lc + lmu })
}

fn exp_floor(e: f64) -> f64 {
    if e > -745.0 {
        e.exp()
    } else {
        0.0
    }
}

/// Accumulates ‖F*F‖² over rows of F supplied in chunks.
struct GramAccumulator {
    cols: usize,
    re: DMatrix<f64>,
    im: DMatrix<f64>,
    rows: Vec<Complex64>,
}

impl GramAccumulator {
    fn new(cols: usize) -> Self {
        Self {
            cols,
            re: DMatrix::zeros(cols, cols),
            im: DMatrix::zeros(cols, cols),
            rows: Vec::with_capacity(CUBATURE_CHUNK * cols),
        }
    }

    fn push(&mut self, row: impl Iterator<Item = Complex64>) {
        self.rows.extend(row);
        if self.rows.len() >= CUBATURE_CHUNK * self.cols {
            self.flush();
        }
    }

    fn flush(&mut self) {
        if self.rows.is_empty() || self.cols == 0 {
            self.rows.clear();
            return;
        }
        let n = self.rows.len() / self.cols;
        let a = DMatrix::from_row_iterator(n, self.cols, self.rows.iter().map(|c| c.re));
        let b = DMatrix::from_row_iterator(n, self.cols, self.rows.iter().map(|c| c.im));
        let at = a.transpose();
        let bt = b.transpose();
        self.re += &at * &a + &bt * &b;
        self.im += &at * &b - &bt * &a;
        self.rows.clear();
    }

    fn hs(mut self) -> f64 {
        self.flush();
        self.re.iter().chain(self.im.iter()).map(|v| v * v).sum()
    }
}

/// Sector cubature with radial nodes `radial` and an angular Gauss rule.
fn sector_cubature(
    k: &TruncatedKernel,
    radial: &[(f64, f64)],
    theta0: f64,
    width: f64,
    rule: &GaussLegendre,
) -> DirectIntegrals {
    let n = k.rank();
    // |e_m|² μ is radial, so the column masses need the radial rule only
    let mut mass = vec![0.0; n];
    let logs: Vec<Vec<f64>> = radial
        .iter()
        .map(|&(t, w)| {
            let lw = (w * t * width).ln();
            log_feature_sq(k, t).map(|v| v + lw).collect()
        })
        .collect();
    for row in &logs {
        for (m, v) in row.iter().enumerate() {
            mass[m] += exp_floor(*v);
        }
    }
    let trace = mass.iter().sum();
    let keep: Vec<usize> = (0..n).filter(|&m| mass[m] > CUBATURE_FLOOR).collect();
    if keep.is_empty() {
        return DirectIntegrals { trace, hs_norm_sq: 0.0, points: 0 };
    }
    // 16-point panels of angular phase at most 8 radians
    let span = (keep[keep.len() - 1] - keep[0]) as f64;
    let angle_panels = ((span * width / 8.0).ceil() as usize).max(2);
    let angles = rule.composite(theta0, theta0 + width, angle_panels);
    let mut gram = GramAccumulator::new(keep.len());
    for (row, &(t, w)) in logs.iter().zip(radial) {
        let lw = (w * t * width).ln();
        let mags: Vec<f64> = keep.iter().map(|&m| exp_floor(0.5 * (row[m] - lw + (w * t).ln()))).collect();
        for &(th, wt) in &angles {
            let sw = wt.sqrt();
            gram.push(keep.iter().zip(&mags).map(|(&m, &g)| Complex64::from_polar(g * sw, m as f64 * th)));
        }
    }
    DirectIntegrals { trace, hs_norm_sq: gram.hs(), points: radial.len() * angles.len() }
}

/// Cubature over arbitrary weighted points.
fn point_cubature(k: &TruncatedKernel, pts: &[(Complex64, f64)]) -> DirectIntegrals {
    let n = k.rank();
    let mut mass = vec![0.0; n];
    for &(z, w) in pts {
        let lw = w.ln();
        for (m, v) in log_feature_sq(k, z.norm()).enumerate() {
            mass[m] += exp_floor(v + lw);
        }
    }
    let trace = mass.iter().sum();
    let keep: Vec<usize> = (0..n).filter(|&m| mass[m] > CUBATURE_FLOOR).collect();
    let mut gram = GramAccumulator::new(keep.len());
    for &(z, w) in pts {
        let (t, th) = z.to_polar();
        let logs: Vec<f64> = log_feature_sq(k, t).collect();
        gram.push(keep.iter().map(|&m| Complex64::from_polar(exp_floor(0.5 * (logs[m] + w.ln())), m as f64 * th)));
    }
    DirectIntegrals { trace, hs_norm_sq: gram.hs(), points: pts.len() }
}

/// ∬_{cell²} [K(z,z)K(ζ,ζ) − |K(z,ζ)|²] dμ dμ = (∫K dμ)² − ∬|K|² dμ dμ.
pub fn pair_intensity_integral(k: &TruncatedKernel, cell: &Cell) -> Result<f64> {
    let d = direct_cell_integrals(k, cell)?;
    Ok(d.trace * d.trace - d.hs_norm_sq)
}

/// Everything recorded per cell in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub n: u32,
    pub k: u32,
    pub scale: f64,
    pub center_modulus: f64,
    pub rho_center: f64,
    pub trace: f64,
    pub hs_norm_sq: f64,
    pub p0: f64,
    pub p1: f64,
    pub p_geq2_exact: f64,
    pub p_geq2_second_order: f64,
    pub lambda1_lb: f64,
    pub lambda2_lb: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// P(X ≥ 2) for a Poisson count with the same mean.
    pub poisson_p_geq2: f64,
    pub band: usize,
}

/// Galerkin matrix, spectrum, probabilities and witnesses of one cell.
pub fn analyze_cell(k: &TruncatedKernel, cell: &Cell) -> Result<CellRecord> {
    let m = restriction_matrix(k, cell)?;
    let s = spectrum(&m)?;
    let p = cell_probabilities(&s);
    let (w1, w2) = lambda_witnesses_from(k, &m)?;
    let (n, kk, scale) = match cell.kind {
        CellKind::AnnularSector { n, k, scale } | CellKind::ShiftedAnnularSector { n, k, scale } => (n, k, scale),
        CellKind::Disk { radius, .. } => (0, 0, radius),
    };
    let r = cell.center_point.norm();
    Ok(CellRecord {
        n,
        k: kk,
        scale,
        center_modulus: r,
        rho_center: k.basis.rho(r),
        trace: s.trace,
        hs_norm_sq: s.hs_norm_sq,
        p0: p.p0,
        p1: p.p1,
        p_geq2_exact: p.p_geq2_exact,
        p_geq2_second_order: p.p_geq2_second_order,
        lambda1_lb: w1,
        lambda2_lb: w2,
        lambda1: s.eigenvalues.first().copied().unwrap_or(0.0),
        lambda2: s.eigenvalues.get(1).copied().unwrap_or(0.0),
        poisson_p_geq2: poisson_cell_prob(s.trace)?.p_geq2_exact,
        band: m.band.len(),
    })
}

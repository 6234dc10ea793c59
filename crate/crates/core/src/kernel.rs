//! Truncated reproducing kernel of F_φ built from monomial moments.
//!
//! Radial weights make the monomials orthogonal in L²(e^{−2φ} dm/ρ²), so the
//! kernel is Σ (z ζ̄)ⁿ / c_n with c_n = c_φ ∫ |z|^{2n} e^{−2φ} dm/ρ² and c_φ
//! fixed by ‖1‖ = 1. The moments span hundreds of orders of magnitude and are
//! kept as logarithms throughout.

use core::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::prelude::*;
use crate::quad::{self, Tolerance};
use crate::weights::{RadiusField, RhoTable, Weight, WeightFamily, DEFAULT_TABLE_STEP};
use crate::{Error, Result};

/// Default hard cap on the truncation rank.
pub const DEFAULT_RANK_CAP: usize = 2048;

/// Log-density drop (in nats) below the peak at which radial integrands are cut.
const LOG_DROP: f64 = 90.0;

const MOMENT_TOLERANCE: Tolerance = Tolerance { abs: 0.0, rel: 1e-11, max_intervals: 2000 };

/// Monomial norms c_n (as ln c_n), the normalization c_φ and a table of ρ
/// covering the radial range the moments live on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBasis {
    weight: Weight,
    log_moments: Vec<f64>,
    log_c_phi: f64,
    rho: RhoTable,
}

/// Incremental moment computation sharing one ρ table.
struct MomentSeries<'a> {
    rf: &'a RadiusField,
    table: RhoTable,
    /// ln ∫ t^{2n} e^{−2φ} ρ^{−2} 2πt dt, unnormalized.
    raw: Vec<f64>,
}

impl<'a> MomentSeries<'a> {
    fn new(rf: &'a RadiusField) -> Result<Self> {
        let table = rf.tabulate(1.0, DEFAULT_TABLE_STEP)?;
        Ok(Self { rf, table, raw: Vec::new() })
    }

    fn weight(&self) -> &Weight {
        self.rf.weight()
    }

    /// Radius where t φ'(t) = s, the peak of t^{2s} e^{−2φ(t)}.
    fn peak_radius(&self, s: f64) -> Result<f64> {
        match self.weight().family {
            WeightFamily::PowerAlpha { alpha } => Ok((s / alpha).powf(1.0 / alpha)),
            WeightFamily::TabulatedRadial(_) => {
                let g = |t: f64| t * self.weight().dphi(t);
                let mut hi = 1.0;
                while g(hi) < s {
                    hi *= 2.0;
                    if hi > 1e12 {
                        return Err(Error::TailDivergence { n: s as usize });
                    }
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if g(mid) < s {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(0.5 * (lo + hi))
            }
        }
    }

    fn log_integrand(&mut self, n: usize, t: f64) -> Result<f64> {
        if t <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        if !self.table.covers(t) {
            self.rf.extend_table(&mut self.table, 1.25 * t + 1.0)?;
        }
        Ok((2 * n + 1) as f64 * t.ln() - 2.0 * self.weight().phi(t) - 2.0 * self.table.log_eval(t) + (2.0 * PI).ln())
    }

    /// Radial range [lo, hi] outside which the integrand of moment `n` is
    /// below its peak by more than `drop` nats.
    fn support(&mut self, n: usize, drop: f64) -> Result<(f64, f64, f64)> {
        let peak = self.peak_radius(n as f64 + 0.5)?;
        let h_peak = self.log_integrand(n, peak)?;
        if !h_peak.is_finite() {
            return Err(Error::TailDivergence { n });
        }
        let mut d = 0.05 * peak.max(0.1);
        let hi = loop {
            let t = peak + d;
            if self.log_integrand(n, t)? < h_peak - drop {
                break t;
            }
            d *= 1.5;
            if d > 1e9 {
                return Err(Error::TailDivergence { n });
            }
        };
        let mut d = 0.05 * peak.max(0.1);
        let lo = loop {
            let t = peak - d;
            if t <= 0.0 {
                break 0.0;
            }
            if self.log_integrand(n, t)? < h_peak - drop {
                break t;
            }
            d *= 1.5;
        };
        Ok((lo, peak, hi))
    }

    fn push(&mut self) -> Result<()> {
        let n = self.raw.len();
        let (lo, peak, hi) = self.support(n, LOG_DROP)?;
        let h_peak = self.log_integrand(n, peak)?;
        self.rf.extend_table(&mut self.table, hi)?;
        let table = &self.table;
        let weight = self.rf.weight();
        let h = |t: f64| {
            if t <= 0.0 {
                return 0.0;
            }
            let v = (2 * n + 1) as f64 * t.ln() - 2.0 * weight.phi(t) - 2.0 * table.log_eval(t) + (2.0 * PI).ln();
            (v - h_peak).exp()
        };
        let left = quad::integrate(h, lo, peak, MOMENT_TOLERANCE).map_err(|_| Error::TailDivergence { n })?;
        let right = quad::integrate(h, peak, hi, MOMENT_TOLERANCE).map_err(|_| Error::TailDivergence { n })?;
        let v = h_peak + (left + right).ln();
        if !v.is_finite() {
            return Err(Error::TailDivergence { n });
        }
        self.raw.push(v);
        Ok(())
    }

    fn ensure(&mut self, count: usize) -> Result<()> {
        while self.raw.len() < count {
            self.push()?;
        }
        Ok(())
    }

    fn log_c(&self, n: usize) -> f64 {
        self.raw[n] - self.raw[0]
    }

    fn into_basis(mut self, rank: usize) -> Result<KernelBasis> {
        self.ensure(rank)?;
        // cover the support of the highest basis function
        let (_, _, hi) = self.support(rank - 1, LOG_DROP)?;
        self.rf.extend_table(&mut self.table, hi)?;
        let log_c_phi = -self.raw[0];
        let log_moments = self.raw[..rank].iter().map(|v| v + log_c_phi).collect();
        Ok(KernelBasis { weight: self.rf.weight().clone(), log_moments, log_c_phi, rho: self.table })
    }
}

/// Computes ln c_n for n < `rank` by adaptive radial quadrature in log domain.
pub fn compute_moments(rf: &RadiusField, rank: usize) -> Result<KernelBasis> {
    if rank == 0 {
        return Err(Error::InvalidParameter("rank must be at least 1".into()));
    }
    MomentSeries::new(rf)?.into_basis(rank)
}

impl KernelBasis {
    pub fn weight(&self) -> &Weight {
        &self.weight
    }

    pub fn rank(&self) -> usize {
        self.log_moments.len()
    }

    /// ln c_n, n = 0..rank.
    pub fn log_moments(&self) -> &[f64] {
        &self.log_moments
    }

    pub fn log_c_phi(&self) -> f64 {
        self.log_c_phi
    }

    pub fn rho_table(&self) -> &RhoTable {
        &self.rho
    }

    /// ρ at radius `t` from the basis' own table.
    pub fn rho(&self, t: f64) -> f64 {
        self.rho.eval(t)
    }

    /// ln of the density of μ_φ = c_φ e^{−2φ} dm/ρ² at radius `t`.
    pub fn log_mu_density(&self, t: f64) -> f64 {
        self.log_c_phi - 2.0 * self.weight.phi(t) - 2.0 * self.rho.log_eval(t)
    }

    /// ln |e_n(z)| = n ln|z| − ½ ln c_n for |z| = t.
    pub fn log_feature_moduli(&self, t: f64) -> Vec<f64> {
        let lt = t.ln();
        self.log_moments
            .iter()
            .enumerate()
            .map(|(n, lc)| if n == 0 { -0.5 * lc } else { n as f64 * lt - 0.5 * lc })
            .collect()
    }

    /// Feature vector e_n(z) = zⁿ/√c_n scaled by e^{−shift}; returns the
    /// vector and the shift.
    pub fn features(&self, z: Complex64) -> (Vec<Complex64>, f64) {
        let (t, theta) = z.to_polar();
        let logs = self.log_feature_moduli(t);
        let shift = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let v =
            logs.iter().enumerate().map(|(n, l)| Complex64::from_polar((l - shift).exp(), n as f64 * theta)).collect();
        (v, shift)
    }

    /// Radius beyond which every basis function carries less than e^{−drop}
    /// of its (unit) mass density peak.
    pub fn support_radius(&self, rf: &RadiusField, drop: f64) -> Result<f64> {
        let mut series = MomentSeries { rf, table: self.rho.clone(), raw: Vec::new() };
        Ok(series.support(self.rank() - 1, drop)?.2)
    }

    /// The first `rank` basis functions.
    pub fn truncated(&self, rank: usize) -> Self {
        let mut b = self.clone();
        b.log_moments.truncate(rank.max(1));
        b
    }

    /// Text table `n,ln_c_n` preceded by `#` metadata lines.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# weight={}\n", self.weight.description));
        out.push_str(&format!("# log_c_phi={:e}\n", self.log_c_phi));
        out.push_str("n,ln_c_n\n");
        for (n, v) in self.log_moments.iter().enumerate() {
            out.push_str(&format!("{n},{v:e}\n"));
        }
        out
    }

    /// Inverse of [`to_table`](Self::to_table); ρ is re-tabulated from `rf`.
    pub fn from_table(rf: &RadiusField, text: &str) -> Result<Self> {
        let mut log_c_phi = None;
        let mut log_moments = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(meta) = line.strip_prefix('#') {
                if let Some(v) = meta.trim().strip_prefix("log_c_phi=") {
                    log_c_phi = Some(
                        v.trim().parse::<f64>().map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?,
                    );
                }
                continue;
            }
            if line.is_empty() || line.starts_with("n,") {
                continue;
            }
            let mut it = line.split(',');
            let (Some(n), Some(v), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Parse { line: i + 1, message: "expected `n,ln_c_n`".into() });
            };
            let bad = |m: String| Error::Parse { line: i + 1, message: m };
            let n: usize = n.trim().parse().map_err(|e: core::num::ParseIntError| bad(e.to_string()))?;
            let v: f64 = v.trim().parse().map_err(|e: core::num::ParseFloatError| bad(e.to_string()))?;
            if n != log_moments.len() {
                return Err(bad(format!("row index {n} out of sequence")));
            }
            log_moments.push(v);
        }
        let log_c_phi =
            log_c_phi.ok_or_else(|| Error::Parse { line: 0, message: "missing `# log_c_phi=` header".into() })?;
        if log_moments.is_empty() {
            return Err(Error::Parse { line: 0, message: "no moments".into() });
        }
        let mut series = MomentSeries::new(rf)?;
        let (_, _, hi) = series.support(log_moments.len() - 1, LOG_DROP)?;
        rf.extend_table(&mut series.table, hi)?;
        Ok(Self { weight: rf.weight().clone(), log_moments, log_c_phi, rho: series.table })
    }
}

/// Truncation rank for a window: the smallest N whose relative diagonal
/// tail Σ_{n≥N} R^{2n}/c_n ≤ tol · Σ_{n<N} R^{2n}/c_n.
pub fn truncation_rank_for_window(rf: &RadiusField, radius: f64, tol: f64) -> Result<usize> {
    truncation_rank_with_cap(rf, radius, tol, DEFAULT_RANK_CAP)
}

pub fn truncation_rank_with_cap(rf: &RadiusField, radius: f64, tol: f64, cap: usize) -> Result<usize> {
    let mut series = MomentSeries::new(rf)?;
    Ok(rank_from_series(&mut series, radius, tol, cap)?.0)
}

/// (N, relative tail at N) from a moment series; extends the series as needed.
fn rank_from_series(series: &mut MomentSeries<'_>, radius: f64, tol: f64, cap: usize) -> Result<(usize, f64)> {
    if !(tol > 0.0 && tol <= 1e-2) {
        return Err(Error::InvalidParameter(format!("tolerance must lie in (0, 1e-2], got {tol}")));
    }
    if !(radius >= 0.0) {
        return Err(Error::InvalidParameter(format!("window radius must be nonnegative, got {radius}")));
    }
    if radius == 0.0 {
        return Ok((1, 0.0));
    }
    let lr = 2.0 * radius.ln();
    // log terms a_n = 2n ln R − ln c_n; extend until far past the peak
    let mut terms: Vec<f64> = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let limit = cap + 1;
    loop {
        let n = terms.len();
        series.ensure(n + 1)?;
        let a = n as f64 * lr - series.log_c(n);
        best = best.max(a);
        terms.push(a);
        let decreasing = n > 0 && a < terms[n - 1];
        if decreasing && a < best + tol.ln() - 40.0 {
            break;
        }
        if terms.len() > limit {
            break;
        }
    }
    // geometric bound for anything past the last computed term
    let m = terms.len();
    let ratio = if m >= 2 { (terms[m - 1] - terms[m - 2]).exp() } else { 0.0 };
    let extra = if ratio < 1.0 { terms[m - 1] + (ratio / (1.0 - ratio)).ln() } else { f64::INFINITY };
    let mut suffix = vec![0.0; m + 1];
    let shifted_extra = if extra.is_finite() { (extra - best).exp() } else { f64::INFINITY };
    suffix[m] = shifted_extra;
    for n in (0..m).rev() {
        suffix[n] = suffix[n + 1] + (terms[n] - best).exp();
    }
    let total = suffix[0];
    for (n, &tail) in suffix.iter().enumerate().take(cap.min(m) + 1).skip(1) {
        let head = total - tail;
        if tail <= tol * head {
            return Ok((n, tail / head));
        }
    }
    Err(Error::RankCap { cap, window: radius })
}

/// The rank-N kernel Σ_{n<N} (z ζ̄)ⁿ / c_n with its validity window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedKernel {
    pub basis: KernelBasis,
    pub window_radius: f64,
    /// Relative diagonal truncation error at |z| = window_radius.
    pub diag_error_bound: f64,
}

impl TruncatedKernel {
    /// Chooses the rank from the window and the relative tail tolerance.
    pub fn for_window(rf: &RadiusField, window_radius: f64, tol: f64) -> Result<Self> {
        Self::for_window_with_cap(rf, window_radius, tol, DEFAULT_RANK_CAP)
    }

    pub fn for_window_with_cap(rf: &RadiusField, window_radius: f64, tol: f64, cap: usize) -> Result<Self> {
        let mut series = MomentSeries::new(rf)?;
        let (rank, bound) = rank_from_series(&mut series, window_radius, tol, cap)?;
        Ok(Self { basis: series.into_basis(rank)?, window_radius, diag_error_bound: bound })
    }

    /// Fixed rank; the window is validated against `window_radius` and the
    /// truncation error there is estimated from further moments.
    pub fn with_rank(rf: &RadiusField, rank: usize, window_radius: f64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidParameter("rank must be at least 1".into()));
        }
        let mut series = MomentSeries::new(rf)?;
        let bound = diag_tail(&mut series, rank, window_radius)?;
        Ok(Self { basis: series.into_basis(rank)?, window_radius, diag_error_bound: bound })
    }

    /// Wraps an existing basis (e.g. one read back from a table).
    pub fn from_basis(rf: &RadiusField, basis: KernelBasis, window_radius: f64) -> Result<Self> {
        let mut series = MomentSeries::new(rf)?;
        let bound = diag_tail(&mut series, basis.rank(), window_radius)?;
        Ok(Self { basis, window_radius, diag_error_bound: bound })
    }

    pub fn rank(&self) -> usize {
        self.basis.rank()
    }

    pub fn check_window(&self, z: Complex64) -> Result<()> {
        let m = z.norm();
        if m > self.window_radius * (1.0 + 1e-12) {
            return Err(Error::OutsideWindow { modulus: m, radius: self.window_radius, bound: self.diag_error_bound });
        }
        Ok(())
    }

    /// ln K(z, ζ) as a complex logarithm (real part ln|K|).
    pub fn log_eval(&self, z: Complex64, zeta: Complex64) -> Result<Complex64> {
        self.check_window(z)?;
        self.check_window(zeta)?;
        Ok(log_series(&self.basis.log_moments, z * zeta.conj()))
    }

    /// K(z, ζ). Overflows to infinity for large arguments; see
    /// [`log_eval`](Self::log_eval).
    pub fn eval(&self, z: Complex64, zeta: Complex64) -> Result<Complex64> {
        Ok(self.log_eval(z, zeta)?.exp())
    }

    /// ln K(z, z).
    pub fn log_diag(&self, z: Complex64) -> Result<f64> {
        self.check_window(z)?;
        Ok(log_series(&self.basis.log_moments, Complex64::new(z.norm_sqr(), 0.0)).re)
    }
}

/// ln Σ wⁿ / c_n for complex w, by a max-shifted sum.
fn log_series(log_c: &[f64], w: Complex64) -> Complex64 {
    let (r, theta) = w.to_polar();
    if r == 0.0 {
        return Complex64::new(-log_c[0], 0.0);
    }
    let lr = r.ln();
    let shift = log_c.iter().enumerate().map(|(n, lc)| n as f64 * lr - lc).fold(f64::NEG_INFINITY, f64::max);
    let mut acc = Complex64::new(0.0, 0.0);
    for (n, lc) in log_c.iter().enumerate() {
        let e = n as f64 * lr - lc - shift;
        if e > -745.0 {
            acc += Complex64::from_polar(e.exp(), n as f64 * theta);
        }
    }
    Complex64::new(shift, 0.0) + acc.ln()
}

/// Relative tail Σ_{n≥N} R^{2n}/c_n / Σ_{n<N} R^{2n}/c_n from further moments.
fn diag_tail(series: &mut MomentSeries<'_>, rank: usize, radius: f64) -> Result<f64> {
    if radius == 0.0 {
        return Ok(0.0);
    }
    let lr = 2.0 * radius.ln();
    series.ensure(rank)?;
    let head: Vec<f64> = (0..rank).map(|n| n as f64 * lr - series.log_c(n)).collect();
    let head = quad::log_sum_exp(&head);
    let mut tail = Vec::new();
    let mut n = rank;
    loop {
        series.ensure(n + 1)?;
        let a = n as f64 * lr - series.log_c(n);
        tail.push(a);
        let prev = if n > rank { tail[tail.len() - 2] } else { f64::INFINITY };
        if (a < prev && a < head - 60.0) || tail.len() > 4 * rank + 64 {
            break;
        }
        n += 1;
    }
    Ok((quad::log_sum_exp(&tail) - head).exp())
}

/// (c_low, c_high): extremes of K(z,z)·e^{−2φ(z)} over the samples.
pub fn kernel_diag_check(k: &TruncatedKernel, samples: &[Complex64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no sample points".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &z in samples {
        let v = (k.log_diag(z)? - 2.0 * k.basis.weight.phi(z.norm())).exp();
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok((lo, hi))
}

/// d_K(z, ζ) = √(1 − |K(z,ζ)|²/(K(z,z)K(ζ,ζ))).
///
/// Computed as the norm of the component of ê(z) orthogonal to ê(ζ), which
/// keeps full relative accuracy for nearby points.
pub fn metric_dk(k: &TruncatedKernel, z: Complex64, zeta: Complex64) -> Result<f64> {
    k.check_window(z)?;
    k.check_window(zeta)?;
    if z == zeta {
        return Ok(0.0);
    }
    let (mut u, _) = k.basis.features(z);
    let (mut v, _) = k.basis.features(zeta);
    normalize(&mut u);
    normalize(&mut v);
    let ip: Complex64 = v.iter().zip(&u).map(|(a, b)| a.conj() * b).sum();
    let resid: f64 = u.iter().zip(&v).map(|(a, b)| (a - ip * b).norm_sqr()).sum();
    Ok(resid.sqrt().clamp(0.0, 1.0))
}

fn normalize(v: &mut [Complex64]) {
    let n = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|c| *c /= n);
    }
}

/// Path-length proxy for the Bergman distance: the least ∫ ρ(γ)^{−1} |dγ|
/// over the straight segment and four two-segment detours through points
/// offset perpendicularly from the midpoint by ±¼ and ±½ of |z − ζ|.
///
/// Comparable to d_B only up to constants.
pub fn metric_db_proxy(rf: &RadiusField, z: Complex64, zeta: Complex64) -> Result<f64> {
    if z == zeta {
        return Ok(0.0);
    }
    let d = zeta - z;
    let mid = z + 0.5 * d;
    let normal = Complex64::new(-d.im, d.re);
    let mut paths: Vec<Vec<Complex64>> = vec![vec![z, zeta]];
    for s in [-0.5, -0.25, 0.25, 0.5] {
        paths.push(vec![z, mid + s * normal, zeta]);
    }
    let rule = quad::GaussLegendre::new(8);
    let mut best = f64::INFINITY;
    for path in &paths {
        let mut coarse = 0.0;
        let mut fine = 0.0;
        for seg in path.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let len = (b - a).norm();
            for (panels, acc) in [(2usize, &mut coarse), (4, &mut fine)] {
                for (s, w) in rule.composite(0.0, 1.0, panels) {
                    *acc += w * len / rf.rho(a + s * (b - a))?;
                }
            }
        }
        let residual = (fine - coarse).abs();
        if residual > 1e-6 * fine {
            return Err(Error::Quadrature { residual });
        }
        best = best.min(fine);
    }
    Ok(best)
}

//! Radial doubling weights, their Laplacian mass and the ρ-function.
//!
//! Conventions: ν(A) = ∫_A Δφ dm with plain Lebesgue area, so Δ|z|² = 4 and
//! ρ ≡ 1/(2√π) for the Gaussian weight. ρ(z) is the radius at which
//! ν(D(z, ρ(z))) = 1. Every weight here is radial, hence ρ depends on |z| only.

use core::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::prelude::*;
use crate::quad::{self, GaussLegendre, Tolerance};
use crate::{Error, Result};

/// Tolerance of the disk-mass quadrature used inside the ρ bisection.
pub const MASS_TOLERANCE: Tolerance = Tolerance { abs: 1e-15, rel: 1e-12, max_intervals: 400 };

/// Default node spacing of [`RhoTable`] in units of the local ρ.
pub const DEFAULT_TABLE_STEP: f64 = 0.025;

/// Margin on the integrand exponent for the Finite / Divergent calls.
pub const EXPONENT_MARGIN: f64 = 0.05;
/// Width of the band around the critical exponent −1 that is resolved as
/// divergent (the `≥` convention at the threshold itself).
pub const BOUNDARY_BAND: f64 = 0.01;

/// Radial profile of φ interpolated by a not-a-knot cubic spline, which is
/// exact on cubics and keeps the Laplacian continuous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialTable {
    r: Vec<f64>,
    phi: Vec<f64>,
    /// Second derivatives of the spline at the nodes.
    curvature: Vec<f64>,
}

impl RadialTable {
    pub fn new(r: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        if r.len() != phi.len() {
            return Err(Error::InvalidParameter("radius and value columns differ in length".into()));
        }
        if r.len() < 4 {
            return Err(Error::InvalidParameter("a radial table needs at least 4 rows".into()));
        }
        if r[0] < 0.0 {
            return Err(Error::InvalidParameter("radii must be nonnegative".into()));
        }
        for (i, w) in r.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::Parse { line: i + 2, message: "radii must be strictly increasing".into() });
            }
        }
        if r.iter().chain(&phi).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("table entries must be finite".into()));
        }
        let curvature = not_a_knot_curvature(&r, &phi);
        let table = Self { r, phi, curvature };
        table.validate()?;
        Ok(table)
    }

    pub fn radii(&self) -> &[f64] {
        &self.r
    }

    pub fn values(&self) -> &[f64] {
        &self.phi
    }

    fn knot_slope(&self, i: usize) -> f64 {
        let n = self.r.len();
        let (j, at_right) = if i + 1 < n { (i, false) } else { (i - 1, true) };
        let h = self.r[j + 1] - self.r[j];
        let base = (self.phi[j + 1] - self.phi[j]) / h;
        let (m0, m1) = (self.curvature[j], self.curvature[j + 1]);
        if at_right {
            base + h * (m0 + 2.0 * m1) / 6.0
        } else {
            base - h * (2.0 * m0 + m1) / 6.0
        }
    }

    /// (φ, φ', φ'') at radius `t`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let n = self.r.len();
        let (r0, rn) = (self.r[0], self.r[n - 1]);
        if t < r0 {
            // Quadratic continuation keeping φ' continuous: constant Laplacian.
            let c = self.knot_slope(0) / (2.0 * r0);
            return (self.phi[0] + c * (t * t - r0 * r0), 2.0 * c * t, 2.0 * c);
        }
        if t > rn {
            let (pn, mn) = (self.phi[n - 1], self.knot_slope(n - 1));
            if pn > 0.0 && mn > 0.0 {
                let beta = rn * mn / pn;
                let v = pn * (t / rn).powf(beta);
                return (v, beta * v / t, beta * (beta - 1.0) * v / (t * t));
            }
            return (pn + mn * (t - rn), mn, 0.0);
        }
        let i = self.r.partition_point(|&x| x <= t).clamp(1, n - 1) - 1;
        let h = self.r[i + 1] - self.r[i];
        let a = (self.r[i + 1] - t) / h;
        let b = 1.0 - a;
        let (y0, y1) = (self.phi[i], self.phi[i + 1]);
        let (m0, m1) = (self.curvature[i], self.curvature[i + 1]);
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d = (y1 - y0) / h - (3.0 * a * a - 1.0) * h * m0 / 6.0 + (3.0 * b * b - 1.0) * h * m1 / 6.0;
        (v, d, a * m0 + b * m1)
    }

    fn validate(&self) -> Result<()> {
        let scale = self.phi.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..self.r.len() - 1 {
            for j in 0..=8 {
                let t = self.r[i] + (self.r[i + 1] - self.r[i]) * j as f64 / 8.0;
                if t <= 0.0 {
                    continue;
                }
                let (_, d, dd) = self.eval(t);
                // t·Δφ = t φ'' + φ' must stay nonnegative.
                if t * dd + d < -1e-10 * scale {
                    return Err(Error::InvalidParameter(format!(
                        "interpolated weight is not subharmonic near r = {t}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Spline second derivatives with not-a-knot ends (needs ≥ 4 nodes).
fn not_a_knot_curvature(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    // tridiagonal system in M_1..M_{n-2} after eliminating the end values
    let m = n - 2;
    let mut sub = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut sup = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for k in 0..m {
        let i = k + 1;
        sub[k] = h[i - 1];
        diag[k] = 2.0 * (h[i - 1] + h[i]);
        sup[k] = h[i];
        rhs[k] = 6.0 * (delta[i] - delta[i - 1]);
    }
    diag[0] += h[0] * (1.0 + h[0] / h[1]);
    sup[0] -= h[0] * h[0] / h[1];
    let (p, q) = (h[n - 3], h[n - 2]);
    diag[m - 1] += q * (1.0 + q / p);
    sub[m - 1] -= q * q / p;
    // Thomas algorithm
    for k in 1..m {
        let w = sub[k] / diag[k - 1];
        diag[k] -= w * sup[k - 1];
        rhs[k] -= w * rhs[k - 1];
    }
    let mut inner = vec![0.0; m];
    inner[m - 1] = rhs[m - 1] / diag[m - 1];
    for k in (0..m - 1).rev() {
        inner[k] = (rhs[k] - sup[k] * inner[k + 1]) / diag[k];
    }
    let mut out = vec![0.0; n];
    out[1..n - 1].copy_from_slice(&inner);
    out[0] = out[1] - h[0] * (out[2] - out[1]) / h[1];
    out[n - 1] = out[n - 2] + q * (out[n - 2] - out[n - 3]) / p;
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WeightFamily {
    /// φ(z) = |z|^α.
    PowerAlpha {
        alpha: f64,
    },
    TabulatedRadial(RadialTable),
}

/// A radial subharmonic weight with doubling Laplacian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weight {
    pub family: WeightFamily,
    pub description: String,
}

impl Weight {
    pub fn power(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { family: WeightFamily::PowerAlpha { alpha }, description: format!("|z|^{alpha}") })
    }

    pub fn tabulated(r: Vec<f64>, phi: Vec<f64>, description: impl Into<String>) -> Result<Self> {
        Ok(Self { family: WeightFamily::TabulatedRadial(RadialTable::new(r, phi)?), description: description.into() })
    }

    /// Parses a two-column `(r, φ(r))` table. Columns may be separated by
    /// whitespace or commas; `#` starts a comment; a leading non-numeric
    /// line is treated as a header.
    pub fn parse_table(text: &str, description: impl Into<String>) -> Result<Self> {
        let mut r = Vec::new();
        let mut phi = Vec::new();
        let mut seen_data = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> =
                line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
            let parsed: Option<(f64, f64)> = match fields.as_slice() {
                [a, b] => a.parse().ok().zip(b.parse().ok()),
                _ => None,
            };
            match parsed {
                Some((a, b)) => {
                    r.push(a);
                    phi.push(b);
                    seen_data = true;
                }
                None if !seen_data && r.is_empty() => {
                    // header line
                    seen_data = true;
                }
                None => {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: format!("expected two numeric columns, got `{line}`"),
                    })
                }
            }
        }
        Self::tabulated(r, phi, description)
    }

    pub fn alpha(&self) -> Option<f64> {
        match self.family {
            WeightFamily::PowerAlpha { alpha } => Some(alpha),
            WeightFamily::TabulatedRadial(_) => None,
        }
    }

    /// φ at radius `t`.
    pub fn phi(&self, t: f64) -> f64 {
        match &self.family {
            WeightFamily::PowerAlpha { alpha } => t.powf(*alpha),
            WeightFamily::TabulatedRadial(tab) => tab.eval(t).0,
        }
    }

    /// φ'(t) along a ray.
    pub fn dphi(&self, t: f64) -> f64 {
        match &self.family {
            WeightFamily::PowerAlpha { alpha } => {
                if t == 0.0 {
                    if *alpha < 1.0 {
                        f64::INFINITY
                    } else if *alpha == 1.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    alpha * t.powf(alpha - 1.0)
                }
            }
            WeightFamily::TabulatedRadial(tab) => tab.eval(t).1,
        }
    }

    /// Δφ at radius `t` (per unit area).
    pub fn radial_laplacian(&self, t: f64) -> f64 {
        match &self.family {
            WeightFamily::PowerAlpha { alpha } => alpha * alpha * t.powf(alpha - 2.0),
            WeightFamily::TabulatedRadial(tab) => {
                let (_, d, dd) = tab.eval(t);
                if t == 0.0 {
                    2.0 * dd
                } else {
                    (dd + d / t).max(0.0)
                }
            }
        }
    }

    /// t·Δφ(t): the density of ν per unit radius and unit angle.
    fn ring_density(&self, t: f64) -> f64 {
        match &self.family {
            WeightFamily::PowerAlpha { alpha } => alpha * alpha * t.powf(alpha - 1.0),
            WeightFamily::TabulatedRadial(tab) => {
                let (_, d, dd) = tab.eval(t);
                (t * dd + d).max(0.0)
            }
        }
    }

    /// Δφ(z). Singular at the origin when α < 2.
    pub fn laplacian_density(&self, z: Complex64) -> Result<f64> {
        let t = z.norm();
        if t == 0.0 {
            if let WeightFamily::PowerAlpha { alpha } = self.family {
                if alpha < 2.0 {
                    return Err(Error::SingularOrigin { alpha });
                }
            }
        }
        Ok(self.radial_laplacian(t))
    }

    /// ν(D(0, s)) = 2π s φ'(s).
    pub fn central_mass(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        match &self.family {
            WeightFamily::PowerAlpha { alpha } => 2.0 * PI * alpha * s.powf(*alpha),
            WeightFamily::TabulatedRadial(_) => 2.0 * PI * s * self.dphi(s),
        }
    }

    /// ν(D(z, r)).
    ///
    /// The disk is sliced by circles |w| = t about the origin: the part of the
    /// disk that contains whole circles is the closed form
    /// [`central_mass`](Self::central_mass), the remaining ring is a 1-D
    /// integral of t·Δφ(t) times the angle subtended inside the disk.
    pub fn disk_mass(&self, z: Complex64, r: f64) -> Result<f64> {
        self.disk_mass_with(z, r, MASS_TOLERANCE)
    }

    pub fn disk_mass_with(&self, z: Complex64, r: f64, tol: Tolerance) -> Result<f64> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::InvalidParameter(format!("disk radius must be positive, got {r}")));
        }
        let a = z.norm();
        if a == 0.0 {
            return Ok(self.central_mass(r));
        }
        let inner = if r > a { self.central_mass(r - a) } else { 0.0 };
        let lo = (a - r).abs();
        let hi = a + r;
        let span = hi - lo;
        let ring = quad::adaptive(
            |u: f64| {
                let t = lo + 0.5 * span * (1.0 - u.cos());
                if t <= 0.0 {
                    return 0.0;
                }
                self.ring_density(t) * arc_inside_disk(t, a, r) * 0.5 * span * u.sin()
            },
            0.0,
            PI,
            tol,
        )?;
        Ok(inner + ring.value)
    }
}

/// Angle subtended by the circle |w| = t inside the disk D(c, r), |c| = a.
pub fn arc_inside_disk(t: f64, a: f64, r: f64) -> f64 {
    if a == 0.0 {
        return if t < r { 2.0 * PI } else { 0.0 };
    }
    if t + a <= r {
        return 2.0 * PI;
    }
    if t >= a + r || t <= a - r {
        return 0.0;
    }
    // Half-angle formula for the triangle (t, a, r); stable near tangency.
    let s = 0.5 * (t + a + r);
    let p = ((s - t) * (s - a)).max(0.0);
    let q = (s * (s - r)).max(0.0);
    4.0 * p.sqrt().atan2(q.sqrt())
}

/// Process whose separation is being classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Process {
    Determinantal,
    Poisson,
}

impl Process {
    /// Exponent γ of the classification integral ∫ ρ^(−γ) dm.
    pub fn gamma(self) -> f64 {
        match self {
            Process::Determinantal => 6.0,
            Process::Poisson => 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    AlmostSurelySeparated,
    AlmostSurelyNotSeparated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntegralVerdict {
    Finite,
    Divergent,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IntegralEstimate {
    Finite(f64),
    Divergent,
}

/// Result of [`RadiusField::integral_rho_power`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoPowerIntegral {
    pub gamma: f64,
    pub r_max: f64,
    pub partial_integral: f64,
    /// β in ρ(r) ~ c·r^β over the outer decade.
    pub tail_exponent: f64,
    /// 1 − γβ: the radial integrand of ∫ρ^(−γ) dm behaves like r^(1−γβ).
    pub integrand_exponent: f64,
    pub verdict: IntegralVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationVerdict {
    pub process: Process,
    pub verdict: Verdict,
    pub tail_exponent: f64,
    pub integral_estimate: IntegralEstimate,
    pub numeric: IntegralVerdict,
    pub closed_form: Option<Verdict>,
    /// Numeric and closed-form verdicts disagree.
    pub conflict: bool,
}

impl Weight {
    /// Closed-form thresholds for |z|^α: determinantal separated iff α < 4/3,
    /// Poisson separated iff α < 1.
    pub fn closed_form_verdict(&self, process: Process) -> Option<Verdict> {
        let alpha = self.alpha()?;
        let threshold = match process {
            Process::Determinantal => 4.0 / 3.0,
            Process::Poisson => 1.0,
        };
        Some(if alpha < threshold { Verdict::AlmostSurelySeparated } else { Verdict::AlmostSurelyNotSeparated })
    }
}

/// Evaluator of ρ(z) by bracketing and bisection on the disk mass.
pub struct RadiusField {
    weight: Weight,
    bisection_tol: f64,
    fit_samples: usize,
    #[cfg(feature = "std")]
    cache: std::sync::RwLock<std::collections::HashMap<u64, f64>>,
}

#[cfg(feature = "std")]
const CACHE_LIMIT: usize = 1 << 20;

impl Clone for RadiusField {
    fn clone(&self) -> Self {
        Self {
            weight: self.weight.clone(),
            bisection_tol: self.bisection_tol,
            fit_samples: self.fit_samples,
            #[cfg(feature = "std")]
            cache: Default::default(),
        }
    }
}

impl core::fmt::Debug for RadiusField {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("RadiusField").field("weight", &self.weight).field("bisection_tol", &self.bisection_tol).finish()
    }
}

impl RadiusField {
    pub fn new(weight: Weight) -> Self {
        Self::with_tolerance(weight, 1e-8)
    }

    pub fn with_tolerance(weight: Weight, bisection_tol: f64) -> Self {
        Self {
            weight,
            bisection_tol: bisection_tol.abs().max(1e-15),
            fit_samples: 32,
            #[cfg(feature = "std")]
            cache: Default::default(),
        }
    }

    /// Number of radial samples used by the tail-exponent fit.
    pub fn with_fit_samples(mut self, n: usize) -> Self {
        self.fit_samples = n;
        self
    }

    pub fn weight(&self) -> &Weight {
        &self.weight
    }

    pub fn bisection_tol(&self) -> f64 {
        self.bisection_tol
    }

    /// Cheap initial guess used to seed the bracket.
    pub fn asymptotic_guess(&self, t: f64) -> f64 {
        match self.weight.family {
            WeightFamily::PowerAlpha { alpha } => {
                let at_origin = (2.0 * PI * alpha).powf(-1.0 / alpha);
                if t <= at_origin {
                    at_origin
                } else {
                    t.powf(0.5 * (2.0 - alpha)) / (alpha * PI.sqrt())
                }
            }
            WeightFamily::TabulatedRadial(_) => {
                let lap = self.weight.radial_laplacian(t.max(1e-6));
                if lap > 0.0 && lap.is_finite() {
                    1.0 / (PI * lap).sqrt()
                } else {
                    1.0
                }
            }
        }
    }

    pub fn rho(&self, z: Complex64) -> Result<f64> {
        self.rho_at_radius(z.norm())
    }

    /// ρ on the circle |z| = t.
    pub fn rho_at_radius(&self, t: f64) -> Result<f64> {
        #[cfg(feature = "std")]
        if let Some(v) = self.cache.read().ok().and_then(|c| c.get(&t.to_bits()).copied()) {
            return Ok(v);
        }
        let v = self.solve(t, None, self.bisection_tol)?;
        #[cfg(feature = "std")]
        if let Ok(mut c) = self.cache.write() {
            if c.len() < CACHE_LIMIT {
                c.insert(t.to_bits(), v);
            }
        }
        Ok(v)
    }

    fn mass_at(&self, t: f64, r: f64) -> Result<f64> {
        self.weight.disk_mass(Complex64::new(t, 0.0), r)
    }

    fn solve(&self, t: f64, hint: Option<(f64, f64)>, tol: f64) -> Result<f64> {
        let (mut lo, mut hi) = match hint {
            Some((lo, hi)) if lo > 0.0 && self.mass_at(t, lo)? < 1.0 && self.mass_at(t, hi)? >= 1.0 => (lo, hi),
            _ => {
                let mut lo = 1e-6;
                while self.mass_at(t, lo)? >= 1.0 {
                    lo *= 0.5;
                    if lo < 1e-300 {
                        return Err(Error::InvalidParameter("disk mass does not vanish at small radii".into()));
                    }
                }
                let mut hi = 2.0 * self.asymptotic_guess(t) + 1.0;
                while self.mass_at(t, hi)? < 1.0 {
                    lo = hi;
                    hi *= 2.0;
                    if hi > 1e15 {
                        return Err(Error::UnboundedRadius { max_radius: hi });
                    }
                }
                (lo, hi)
            }
        };
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.mass_at(t, mid)? < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Tabulates ρ on [0, r_max] with node spacing `rel_step·ρ`.
    ///
    /// Each node is bracketed from its predecessor with the Lipschitz bound
    /// |ρ(t) − ρ(t')| ≤ |t − t'| and refined by regula falsi.
    pub fn tabulate(&self, r_max: f64, rel_step: f64) -> Result<RhoTable> {
        if !(rel_step > 0.0 && rel_step < 1.0) || !(r_max >= 0.0) {
            return Err(Error::InvalidParameter("table step must lie in (0, 1) and the range be nonnegative".into()));
        }
        let rho0 = self.solve(0.0, None, 1e-14)?;
        let mut table = RhoTable {
            rel_step,
            nodes: vec![0.0],
            log_rho: vec![rho0.ln()],
            kink: None,
            kink_radius: self.kink_radius()?,
        };
        self.extend_table(&mut table, r_max)?;
        Ok(table)
    }

    /// The radius t* = ρ(t*) at which the disk D(t, ρ(t)) starts to exclude
    /// the origin. ρ is not smooth there when Δφ is singular at 0.
    fn kink_radius(&self) -> Result<Option<f64>> {
        let g = |t: f64| self.mass_at(t, t);
        let mut hi = 1.0;
        while g(hi)? < 1.0 {
            hi *= 2.0;
            if hi > 1e12 {
                return Ok(None);
            }
        }
        let mut lo = 0.0;
        while hi - lo > 1e-15 * hi {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid)? < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Some(0.5 * (lo + hi)))
    }

    /// Appends nodes until the table reaches past `r_max`.
    ///
    /// Near t* the spacing is also kept below 5% of the distance to t*, so the
    /// logarithmic singularity of ρ' there is resolved.
    pub fn extend_table(&self, table: &mut RhoTable, r_max: f64) -> Result<()> {
        // two nodes beyond r_max keep the interpolation stencil interior
        let mut beyond = table.nodes.iter().filter(|&&t| t > r_max).count();
        while beyond < 2 {
            let t0 = *table.nodes.last().unwrap();
            let p = table.log_rho.last().unwrap().exp();
            let mut step = table.rel_step * p;
            let mut at_kink = false;
            if let Some(k) = table.kink_radius {
                let floor = 1e-13 * k;
                step = step.min((0.05 * (t0 - k).abs()).max(floor));
                if table.kink.is_none() && t0 + step >= k - floor {
                    step = k - t0;
                    at_kink = true;
                }
            }
            let t = t0 + step;
            let v = if at_kink {
                table.kink = Some(table.nodes.len());
                t
            } else {
                self.refine(t, (p - step).max(0.5 * p), p + step)?
            };
            table.nodes.push(t);
            table.log_rho.push(v.ln());
            if t > r_max {
                beyond += 1;
            }
        }
        Ok(())
    }

    /// Root of ν(D(t, r)) = 1 in the bracket [lo, hi] by the Illinois method.
    fn refine(&self, t: f64, lo: f64, hi: f64) -> Result<f64> {
        let f = |r: f64| self.mass_at(t, r).map(|m| m - 1.0);
        let (mut a, mut b) = (lo, hi);
        let (mut fa, mut fb) = (f(a)?, f(b)?);
        if !(fa < 0.0 && fb >= 0.0) {
            return self.solve(t, None, 1e-13 * hi);
        }
        let mut side = 0i8;
        for _ in 0..100 {
            let c = b - fb * (b - a) / (fb - fa);
            let fc = f(c)?;
            if fc.abs() <= 1e-14 || (b - a) <= 1e-14 * b {
                return Ok(c);
            }
            if fc < 0.0 {
                a = c;
                fa = fc;
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            } else {
                b = c;
                fb = fc;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            }
        }
        self.solve(t, Some((a, b)), 1e-13 * b)
    }

    /// ∫_{|z| ≤ R} ρ^(−γ) dm together with the fitted tail exponent of ρ.
    pub fn integral_rho_power(&self, gamma: f64, r_max: f64) -> Result<RhoPowerIntegral> {
        if !(gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
        }
        if !(r_max >= 10.0) {
            return Err(Error::InvalidParameter(format!("R_max must be at least 10, got {r_max}")));
        }
        if self.fit_samples < 10 {
            return Err(Error::InsufficientData(format!(
                "{} radial samples in the outer decade; at least 10 are needed",
                self.fit_samples
            )));
        }
        let rule = GaussLegendre::new(16);
        let mut edges = vec![0.0, 1.0];
        while *edges.last().unwrap() < r_max {
            let next = (edges.last().unwrap() * 1.25).min(r_max);
            edges.push(next);
        }
        let mut partial = 0.0;
        for w in edges.windows(2) {
            for (t, wt) in rule.on(w[0], w[1]) {
                partial += wt * 2.0 * PI * t * self.rho_at_radius(t)?.powf(-gamma);
            }
        }
        let k = self.fit_samples;
        let mut xs = Vec::with_capacity(k);
        let mut ys = Vec::with_capacity(k);
        for i in 0..k {
            let t = r_max * 10f64.powf(-1.0 + i as f64 / (k - 1) as f64);
            xs.push(t.ln());
            ys.push(self.rho_at_radius(t)?.ln());
        }
        let beta = ols_slope(&xs, &ys);
        let e = 1.0 - gamma * beta;
        let verdict = if (e + 1.0).abs() <= BOUNDARY_BAND || e > -1.0 + EXPONENT_MARGIN {
            IntegralVerdict::Divergent
        } else if e < -1.0 - EXPONENT_MARGIN {
            IntegralVerdict::Finite
        } else {
            IntegralVerdict::Inconclusive
        };
        Ok(RhoPowerIntegral {
            gamma,
            r_max,
            partial_integral: partial,
            tail_exponent: beta,
            integrand_exponent: e,
            verdict,
        })
    }

    pub fn classify_separation(&self, process: Process) -> Result<SeparationVerdict> {
        self.classify_separation_with(process, 1e3)
    }

    pub fn classify_separation_with(&self, process: Process, r_max: f64) -> Result<SeparationVerdict> {
        let integral = self.integral_rho_power(process.gamma(), r_max)?;
        let closed_form = self.weight.closed_form_verdict(process);
        let numeric = match integral.verdict {
            IntegralVerdict::Finite => Some(Verdict::AlmostSurelySeparated),
            IntegralVerdict::Divergent => Some(Verdict::AlmostSurelyNotSeparated),
            IntegralVerdict::Inconclusive => None,
        };
        let verdict = match (closed_form, numeric) {
            (Some(v), _) => v,
            (None, Some(v)) => v,
            (None, None) => return Err(Error::Inconclusive { exponent: integral.integrand_exponent }),
        };
        let conflict = matches!((closed_form, numeric), (Some(c), Some(n)) if c != n);
        Ok(SeparationVerdict {
            process,
            verdict,
            tail_exponent: integral.tail_exponent,
            integral_estimate: match integral.verdict {
                IntegralVerdict::Finite => IntegralEstimate::Finite(integral.partial_integral),
                _ => IntegralEstimate::Divergent,
            },
            numeric: integral.verdict,
            closed_form,
            conflict,
        })
    }
}

/// Output of [`doubling_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublingCheck {
    pub max_ratio: f64,
    pub median_ratio: f64,
    pub pass: bool,
}

/// Max of ν(D(z,2r))/ν(D(z,r)) over all sample points and radii.
pub fn doubling_check(w: &Weight, samples: &[Complex64], radii: &[f64]) -> Result<DoublingCheck> {
    if samples.is_empty() || radii.is_empty() {
        return Err(Error::InsufficientData("doubling check needs sample points and radii".into()));
    }
    let mut ratios = Vec::with_capacity(samples.len() * radii.len());
    for &z in samples {
        for &r in radii {
            let small = w.disk_mass(z, r)?;
            if !(small > 0.0) {
                return Err(Error::DegenerateDisk { center_re: z.re, center_im: z.im, radius: r });
            }
            ratios.push(w.disk_mass(z, 2.0 * r)? / small);
        }
    }
    let max_ratio = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_ratio = ratios[ratios.len() / 2];
    Ok(DoublingCheck { max_ratio, median_ratio, pass: max_ratio.is_finite() && max_ratio <= 10.0 * median_ratio })
}

/// ρ sampled on radial nodes spaced proportionally to ρ, interpolated
/// cubically in ln ρ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoTable {
    rel_step: f64,
    nodes: Vec<f64>,
    log_rho: Vec<f64>,
    /// Node index of the non-smooth point t* = ρ(t*); stencils never cross it.
    kink: Option<usize>,
    kink_radius: Option<f64>,
}

impl RhoTable {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Largest radius at which the table interpolates rather than extrapolates.
    pub fn max_radius(&self) -> f64 {
        self.nodes[self.nodes.len().saturating_sub(2)]
    }

    /// The non-smooth point t* = ρ(t*), if any.
    pub fn kink_radius(&self) -> Option<f64> {
        self.kink_radius
    }

    pub fn covers(&self, t: f64) -> bool {
        t.abs() <= self.max_radius()
    }

    /// ln ρ at radius `t`. Beyond the table the last two nodes are
    /// continued as a power law.
    pub fn log_eval(&self, t: f64) -> f64 {
        let t = t.abs();
        let n = self.nodes.len();
        if n < 4 {
            return self.log_rho[0];
        }
        if t >= self.nodes[n - 1] {
            let (t1, t2) = (self.nodes[n - 2], self.nodes[n - 1]);
            let (l1, l2) = (self.log_rho[n - 2], self.log_rho[n - 1]);
            let slope = (l2 - l1) / (t2 / t1).ln();
            return l2 + slope * (t / t2).ln();
        }
        let i = self.nodes.partition_point(|&x| x <= t).saturating_sub(1);
        let mut first = (i as isize - 1).min(n as isize - 4);
        if let Some(k) = self.kink.map(|k| k as isize) {
            if (i as isize) < k {
                first = first.min(k - 3);
            } else {
                first = first.max(k).min(n as isize - 4);
            }
        }
        // ρ is even in t, so node −1 mirrors node 1.
        let node = |j: isize| -> (f64, f64) {
            if j < 0 {
                (-self.nodes[j.unsigned_abs()], self.log_rho[j.unsigned_abs()])
            } else {
                (self.nodes[j as usize], self.log_rho[j as usize])
            }
        };
        let pts = [node(first), node(first + 1), node(first + 2), node(first + 3)];
        let mut acc = 0.0;
        for (a, &(xa, ya)) in pts.iter().enumerate() {
            let mut l = 1.0;
            for (b, &(xb, _)) in pts.iter().enumerate() {
                if a != b {
                    l *= (t - xb) / (xa - xb);
                }
            }
            acc += ya * l;
        }
        acc
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.log_eval(t).exp()
    }
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub(crate) fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    ols(xs, ys).0
}

/// (slope, intercept, r²) of the least-squares line.
pub(crate) fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn laplacian_density_examples() {
        let w2 = Weight::power(2.0).unwrap();
        assert_relative_eq!(w2.laplacian_density(c(3.0, 4.0)).unwrap(), 4.0, max_relative = 1e-14);
        let w1 = Weight::power(1.0).unwrap();
        assert_relative_eq!(w1.laplacian_density(c(2.0, 0.0)).unwrap(), 0.5, max_relative = 1e-14);
        let w15 = Weight::power(1.5).unwrap();
        assert_relative_eq!(w15.laplacian_density(c(0.0, 1.0)).unwrap(), 2.25, max_relative = 1e-14);
    }

    #[test]
    fn laplacian_density_singular_origin() {
        let w = Weight::power(1.0).unwrap();
        assert!(matches!(w.laplacian_density(c(0.0, 0.0)), Err(Error::SingularOrigin { .. })));
        // α = 2 is regular at the origin
        assert_eq!(Weight::power(2.0).unwrap().laplacian_density(c(0.0, 0.0)).unwrap(), 4.0);
    }

    #[test]
    fn alpha_must_be_positive() {
        assert!(Weight::power(0.0).is_err());
        assert!(Weight::power(-1.0).is_err());
    }

    #[test]
    fn disk_mass_examples() {
        let w2 = Weight::power(2.0).unwrap();
        assert_relative_eq!(w2.disk_mass(c(1.0, 1.0), 0.5).unwrap(), PI, max_relative = 1e-11);
        let w1 = Weight::power(1.0).unwrap();
        assert_relative_eq!(w1.disk_mass(c(0.0, 0.0), 1.0).unwrap(), 2.0 * PI, max_relative = 1e-14);
        let w15 = Weight::power(1.5).unwrap();
        let m = w15.disk_mass(c(10.0, 0.0), 0.1).unwrap();
        let approx = 2.25 * 10f64.powf(-0.5) * PI * 0.01;
        assert!((m - approx).abs() < 5e-4 * approx, "{m} vs {approx}");
        assert!((m - 0.02236).abs() < 1e-5);
    }

    #[test]
    fn disk_mass_off_center_containing_origin() {
        // Oracle: scipy dblquad in polar coordinates about the disk center,
        // which agrees with a 1-D arccos-arc quadrature about the origin.
        let w = Weight::power(1.5).unwrap();
        let m = w.disk_mass(c(0.3, 0.0), 1.0).unwrap();
        assert!((m - 9.264583747454854).abs() < 1e-10, "{m}");
    }

    #[test]
    fn disk_mass_rejects_bad_radius() {
        let w = Weight::power(1.0).unwrap();
        assert!(w.disk_mass(c(1.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn arc_inside_disk_limits() {
        assert_relative_eq!(arc_inside_disk(0.5, 1.0, 2.0), 2.0 * PI);
        assert_eq!(arc_inside_disk(5.0, 1.0, 2.0), 0.0);
        // circle through the center of a disk of radius r at distance a = r
        let theta = arc_inside_disk(1.0, 1.0, 1.0);
        assert_relative_eq!(theta, 2.0 * PI / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn rho_examples() {
        let rf2 = RadiusField::new(Weight::power(2.0).unwrap());
        for z in [c(0.0, 0.0), c(3.0, -1.0), c(40.0, 2.0)] {
            assert!((rf2.rho(z).unwrap() - 0.5 / PI.sqrt()).abs() < 2e-8);
        }
        let rf1 = RadiusField::new(Weight::power(1.0).unwrap());
        assert!((rf1.rho(c(0.0, 0.0)).unwrap() - 1.0 / (2.0 * PI)).abs() < 2e-8);
        let rf15 = RadiusField::new(Weight::power(1.5).unwrap());
        let r = rf15.rho(c(100.0, 0.0)).unwrap();
        let asym = 100f64.powf(0.25) / (1.5 * PI.sqrt());
        assert!((r - 1.19).abs() < 5e-3, "{r}");
        assert!((r - asym).abs() < 1e-3 * asym);
    }

    #[test]
    fn rho_solves_the_mass_equation() {
        let w = Weight::power(1.5).unwrap();
        let rf = RadiusField::new(w.clone());
        for z in [c(0.0, 0.0), c(0.1, 0.05), c(2.0, 1.0), c(-30.0, 7.0)] {
            let r = rf.rho(z).unwrap();
            assert!((w.disk_mass(z, r).unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rho_table_matches_direct_evaluation() {
        let rf = RadiusField::new(Weight::power(1.2).unwrap());
        let table = rf.tabulate(6.0, DEFAULT_TABLE_STEP).unwrap();
        assert!(table.covers(6.0) && !table.covers(7.0));
        for t in [0.0, 0.013, 0.5, 1.234, 5.99] {
            let direct = rf.rho_at_radius(t).unwrap();
            let tab = table.eval(t);
            assert!((tab - direct).abs() < 2e-8, "t={t}: {tab} vs {direct}");
        }
    }

    #[test]
    fn integral_rho_power_examples() {
        let finite = RadiusField::new(Weight::power(1.2).unwrap()).integral_rho_power(6.0, 1e3).unwrap();
        assert_eq!(finite.verdict, IntegralVerdict::Finite);
        let div = RadiusField::new(Weight::power(1.5).unwrap()).integral_rho_power(6.0, 1e3).unwrap();
        assert_eq!(div.verdict, IntegralVerdict::Divergent);
        let boundary = RadiusField::new(Weight::power(1.0).unwrap()).integral_rho_power(4.0, 1e3).unwrap();
        assert_eq!(boundary.verdict, IntegralVerdict::Divergent);
        assert!((boundary.integrand_exponent + 1.0).abs() < BOUNDARY_BAND);
    }

    #[test]
    fn integral_rho_power_preconditions() {
        let rf = RadiusField::new(Weight::power(1.2).unwrap());
        assert!(matches!(rf.integral_rho_power(6.0, 5.0), Err(Error::InvalidParameter(_))));
        let sparse = RadiusField::new(Weight::power(1.2).unwrap()).with_fit_samples(5);
        assert!(matches!(sparse.integral_rho_power(6.0, 1e3), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn classify_separation_examples() {
        let v = RadiusField::new(Weight::power(1.2).unwrap()).classify_separation(Process::Determinantal).unwrap();
        assert_eq!(v.verdict, Verdict::AlmostSurelySeparated);
        assert!(!v.conflict);
        let v =
            RadiusField::new(Weight::power(4.0 / 3.0).unwrap()).classify_separation(Process::Determinantal).unwrap();
        assert_eq!(v.verdict, Verdict::AlmostSurelyNotSeparated);
        assert_eq!(v.numeric, IntegralVerdict::Divergent);
        let v = RadiusField::new(Weight::power(1.2).unwrap()).classify_separation(Process::Poisson).unwrap();
        assert_eq!(v.verdict, Verdict::AlmostSurelyNotSeparated);
    }

    #[test]
    fn doubling_check_examples() {
        let w2 = Weight::power(2.0).unwrap();
        let d = doubling_check(&w2, &[c(0.0, 0.0), c(5.0, 1.0)], &[0.1, 1.0, 3.0]).unwrap();
        assert!((d.max_ratio - 4.0).abs() < 1e-9);
        assert!(d.pass);
        let w1 = Weight::power(1.0).unwrap();
        let d = doubling_check(&w1, &[c(0.0, 0.0)], &[0.5, 2.0, 7.0]).unwrap();
        assert!((d.max_ratio - 2.0).abs() < 1e-12);
        let w15 = Weight::power(1.5).unwrap();
        let d = doubling_check(&w15, &[c(50.0, 0.0)], &[1.0]).unwrap();
        assert!((d.max_ratio - 4.0).abs() < 0.01, "{}", d.max_ratio);
    }

    #[test]
    fn doubling_check_needs_samples() {
        let w = Weight::power(2.0).unwrap();
        assert!(doubling_check(&w, &[], &[1.0]).is_err());
    }

    #[test]
    fn tabulated_weight_reproduces_power_law() {
        let r: Vec<f64> = (0..=400).map(|i| i as f64 * 0.05).collect();
        let phi: Vec<f64> = r.iter().map(|t| t * t).collect();
        let text: String = core::iter::once("r,phi\n".to_string())
            .chain(r.iter().zip(&phi).map(|(a, b)| format!("{a},{b}\n")))
            .collect();
        let w = Weight::parse_table(&text, "quadratic").unwrap();
        assert!((w.laplacian_density(c(3.0, 1.0)).unwrap() - 4.0).abs() < 1e-6);
        assert!((w.disk_mass(c(1.0, 1.0), 0.5).unwrap() - PI).abs() < 1e-6);
        // beyond the table: power-law continuation
        assert!((w.phi(30.0) - 900.0).abs() < 1e-3);
        let rf = RadiusField::new(w);
        assert!((rf.rho(c(2.0, 0.0)).unwrap() - 0.5 / PI.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn tabulated_weight_rejects_bad_tables() {
        assert!(Weight::parse_table("0 0\n1 1\n1 2\n", "dup").is_err());
        assert!(Weight::parse_table("0 0\n1 1\n2 4\n", "short").is_err());
        assert!(matches!(Weight::parse_table("0 0\n1 1\nx y\n2 4\n3 9\n", "junk"), Err(Error::Parse { line: 3, .. })));
        // concave in log-radius: not subharmonic
        let r: Vec<f64> = (1..40).map(|i| i as f64 * 0.25).collect();
        let phi: Vec<f64> = r.iter().map(|t: &f64| -t.ln()).collect();
        assert!(Weight::tabulated(r, phi, "log").is_err());
    }
}

//! Point configurations from the truncated determinantal process, the
//! intensity-matched Poisson process and the Ginibre matrix ensemble.

use core::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::kernel::TruncatedKernel;
use crate::prelude::*;
use crate::quad::GaussLegendre;
use crate::weights::{RadiusField, DEFAULT_TABLE_STEP};
use crate::{Error, Result};

/// Radial shells of the rejection envelope.
pub const ENVELOPE_SHELLS: usize = 256;
/// Safety factor applied to shell maxima.
pub const ENVELOPE_FACTOR: f64 = 1.1;
/// Lowest tolerated acceptance rate of the rejection step.
pub const MIN_ACCEPTANCE: f64 = 1e-4;
/// Nodes of the Poisson radial inverse-transform table.
pub const POISSON_NODES: usize = 4096;

const SHELL_PROBES: usize = 17;
/// Mass (in nats below the peak of the last basis function) beyond which
/// the sampler ignores the plane.
const SUPPORT_DROP: f64 = 45.0;

/// Generator for chain `stream` of an experiment seeded with `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Window {
    Disk { radius: f64 },
    Annulus { r_in: f64, r_out: f64 },
}

impl Window {
    pub fn disk(radius: f64) -> Result<Self> {
        let w = Window::Disk { radius };
        w.validate()?;
        Ok(w)
    }

    pub fn annulus(r_in: f64, r_out: f64) -> Result<Self> {
        let w = Window::Annulus { r_in, r_out };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Window::Disk { radius } => radius >= 0.0 && radius.is_finite(),
            Window::Annulus { r_in, r_out } => r_in >= 0.0 && r_out >= r_in && r_out.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Window(format!("invalid window {self:?}")))
        }
    }

    pub fn inner_radius(&self) -> f64 {
        match *self {
            Window::Disk { .. } => 0.0,
            Window::Annulus { r_in, .. } => r_in,
        }
    }

    pub fn outer_radius(&self) -> f64 {
        match *self {
            Window::Disk { radius } => radius,
            Window::Annulus { r_out, .. } => r_out,
        }
    }

    pub fn contains(&self, z: Complex64) -> bool {
        let r = z.norm();
        r >= self.inner_radius() && r <= self.outer_radius()
    }

    pub fn area(&self) -> f64 {
        let (a, b) = (self.inner_radius(), self.outer_radius());
        PI * (b * b - a * a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProcessTag {
    Dpp,
    Poisson,
    GinibreOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointConfiguration {
    pub points: Vec<Complex64>,
    pub window: Window,
    pub process: ProcessTag,
    pub seed: u64,
    pub kernel_rank: Option<usize>,
}

impl PointConfiguration {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points inside a smaller window.
    pub fn restrict(&self, window: Window) -> Result<Self> {
        window.validate()?;
        Ok(Self {
            points: self.points.iter().copied().filter(|z| window.contains(*z)).collect(),
            window,
            ..self.clone()
        })
    }

    /// Number of points in `region`.
    pub fn count_in<F: Fn(Complex64) -> bool>(&self, region: F) -> usize {
        self.points.iter().filter(|z| region(**z)).count()
    }
}

/// Piecewise-constant radial bound on the one-point density K(z,z)μ(z).
#[derive(Debug, Clone)]
struct Envelope {
    edges: Vec<f64>,
    height: Vec<f64>,
    /// Cumulative envelope mass over shells.
    cumulative: Vec<f64>,
}

impl Envelope {
    fn total(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    fn propose<R: Rng>(&self, rng: &mut R) -> (Complex64, usize) {
        let u = rng.random::<f64>() * self.total();
        let j = self.cumulative.partition_point(|&c| c <= u).min(self.height.len() - 1);
        let (a, b) = (self.edges[j], self.edges[j + 1]);
        let t = (a * a + rng.random::<f64>() * (b * b - a * a)).sqrt();
        let theta = 2.0 * PI * rng.random::<f64>();
        (Complex64::from_polar(t, theta), j)
    }
}

/// Feature evaluation for the projection sampler, without window checks.
struct Features<'a> {
    k: &'a TruncatedKernel,
    half_log_c: Vec<f64>,
}

impl<'a> Features<'a> {
    fn new(k: &'a TruncatedKernel) -> Self {
        Self { k, half_log_c: k.basis.log_moments().iter().map(|l| 0.5 * l).collect() }
    }

    /// v_m = e_m(z)·√μ(z), so that ‖v‖² = K(z,z)μ(z).
    fn vector(&self, z: Complex64, out: &mut [Complex64]) {
        let (t, theta) = z.to_polar();
        let half_mu = 0.5 * self.k.basis.log_mu_density(t);
        let lt = if t > 0.0 { t.ln() } else { f64::NEG_INFINITY };
        let step = Complex64::from_polar(1.0, theta);
        let mut phase = Complex64::new(1.0, 0.0);
        for (m, slot) in out.iter_mut().enumerate() {
            let e = if m == 0 { half_mu - self.half_log_c[0] } else { m as f64 * lt - self.half_log_c[m] + half_mu };
            *slot = if e > -745.0 { phase * e.exp() } else { Complex64::new(0.0, 0.0) };
            phase *= step;
        }
    }

    /// K(z,z)μ(z) at radius t.
    fn density(&self, t: f64) -> f64 {
        let lmu = self.k.basis.log_mu_density(t);
        let lt = if t > 0.0 { t.ln() } else { f64::NEG_INFINITY };
        let mut acc = 0.0;
        for (m, h) in self.half_log_c.iter().enumerate() {
            let e = if m == 0 { lmu - 2.0 * h } else { 2.0 * (m as f64 * lt - h) + lmu };
            if e > -745.0 {
                acc += e.exp();
            }
        }
        acc
    }

    /// Radius beyond which the last basis function has decayed by
    /// [`SUPPORT_DROP`] nats below its peak.
    fn support_radius(&self) -> f64 {
        let n = self.half_log_c.len() - 1;
        let log_f = |t: f64| 2.0 * (n as f64 * t.ln() - self.half_log_c[n]) + self.k.basis.log_mu_density(t) + t.ln();
        let mut t = self.k.basis.rho(0.0).max(1e-3);
        let mut best = f64::NEG_INFINITY;
        loop {
            let v = log_f(t);
            best = best.max(v);
            if v < best - SUPPORT_DROP && t > 0.0 {
                return t;
            }
            t += 0.1 * self.k.basis.rho(t);
        }
    }

    fn envelope(&self, radius: f64) -> Envelope {
        let n = ENVELOPE_SHELLS;
        let edges: Vec<f64> = (0..=n).map(|j| radius * j as f64 / n as f64).collect();
        let mut height = Vec::with_capacity(n);
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for j in 0..n {
            let (a, b) = (edges[j], edges[j + 1]);
            let peak = (0..SHELL_PROBES)
                .map(|i| self.density(a + (b - a) * i as f64 / (SHELL_PROBES - 1) as f64))
                .fold(0.0, f64::max);
            let h = ENVELOPE_FACTOR * peak;
            acc += h * PI * (b * b - a * a);
            height.push(h);
            cumulative.push(acc);
        }
        Envelope { edges, height, cumulative }
    }
}

/// Reusable state for repeated draws from one kernel.
pub struct DppSampler<'a> {
    features: Features<'a>,
    envelope: Envelope,
}

impl<'a> DppSampler<'a> {
    pub fn new(k: &'a TruncatedKernel) -> Self {
        let features = Features::new(k);
        let radius = features.support_radius();
        let envelope = features.envelope(radius);
        Self { features, envelope }
    }

    /// Radius of the disk the envelope covers.
    pub fn support_radius(&self) -> f64 {
        *self.envelope.edges.last().unwrap()
    }

    /// One configuration of the full rank-N process, all N points.
    pub fn sample_all<R: Rng>(&self, rng: &mut R) -> Result<Vec<Complex64>> {
        let n = self.features.half_log_c.len();
        let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(n);
        let mut points = Vec::with_capacity(n);
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        let total = self.envelope.total();
        let max_attempts = (1.0 / MIN_ACCEPTANCE) as u64 * 100;
        for step in 0..n {
            let remaining = (n - step) as f64;
            if remaining / total < MIN_ACCEPTANCE {
                return Err(Error::EnvelopeFailure { step, attempts: 0, envelope: total, density: remaining });
            }
            let mut attempts = 0u64;
            loop {
                attempts += 1;
                let (z, shell) = self.envelope.propose(rng);
                self.features.vector(z, &mut v);
                let full: f64 = v.iter().map(|c| c.norm_sqr()).sum();
                let bound = self.envelope.height[shell];
                if full > bound {
                    return Err(Error::EnvelopeFailure { step, attempts, envelope: bound, density: full });
                }
                let proj: Vec<Complex64> = basis.iter().map(|u| inner(u, &v)).collect();
                let q = (full - proj.iter().map(|c| c.norm_sqr()).sum::<f64>()).max(0.0);
                if rng.random::<f64>() * bound < q {
                    // Gram–Schmidt twice against the accepted directions
                    for (u, c) in basis.iter().zip(&proj) {
                        axpy(&mut v, -*c, u);
                    }
                    for u in &basis {
                        let c = inner(u, &v);
                        axpy(&mut v, -c, u);
                    }
                    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                    basis.push(v.iter().map(|c| c / norm).collect());
                    points.push(z);
                    break;
                }
                if attempts >= max_attempts {
                    return Err(Error::EnvelopeFailure { step, attempts, envelope: total, density: remaining });
                }
            }
        }
        Ok(points)
    }
}

/// ⟨u, v⟩ = Σ ū_m v_m.
fn inner(u: &[Complex64], v: &[Complex64]) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

fn axpy(v: &mut [Complex64], c: Complex64, u: &[Complex64]) {
    for (a, b) in v.iter_mut().zip(u) {
        *a += c * b;
    }
}

/// Draws the rank-N projection DPP by sequential conditional sampling and
/// returns the points that fall in `window`.
///
/// The process itself lives on the whole plane; the window must lie inside
/// the kernel's validity region, and only the restriction is reported. A
/// window covering the support yields all N points.
pub fn sample_dpp(k: &TruncatedKernel, window: Window, seed: u64) -> Result<PointConfiguration> {
    window.validate()?;
    if window.outer_radius() > k.window_radius * (1.0 + 1e-12) {
        return Err(Error::OutsideWindow {
            modulus: window.outer_radius(),
            radius: k.window_radius,
            bound: k.diag_error_bound,
        });
    }
    let sampler = DppSampler::new(k);
    let mut rng = rng_for(seed, 0);
    sample_dpp_with(&sampler, window, seed, &mut rng)
}

/// As [`sample_dpp`] with a prepared sampler and generator.
pub fn sample_dpp_with<R: Rng>(
    sampler: &DppSampler<'_>,
    window: Window,
    seed: u64,
    rng: &mut R,
) -> Result<PointConfiguration> {
    let points = sampler.sample_all(rng)?;
    Ok(PointConfiguration {
        points: points.into_iter().filter(|z| window.contains(*z)).collect(),
        window,
        process: ProcessTag::Dpp,
        seed,
        kernel_rank: Some(sampler.features.half_log_c.len()),
    })
}

/// Monotone piecewise-cubic (Fritsch–Carlson) interpolant.
#[derive(Debug, Clone)]
struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    slope: Vec<f64>,
}

impl MonotoneCubic {
    fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
        let mut slope = vec![0.0; n];
        slope[0] = delta[0];
        slope[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] > 0.0 {
                let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
                let (w0, w1) = (2.0 * h1 + h0, h1 + 2.0 * h0);
                slope[i] = (w0 + w1) / (w0 / delta[i - 1] + w1 / delta[i]);
            }
        }
        Self { x, y, slope }
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = self.x.partition_point(|&v| v <= t).clamp(1, n - 1) - 1;
        let h = self.x[i + 1] - self.x[i];
        let s = ((t - self.x[i]) / h).clamp(0.0, 1.0);
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.y[i]
            + (s3 - 2.0 * s2 + s) * h * self.slope[i]
            + (-2.0 * s3 + 3.0 * s2) * self.y[i + 1]
            + (s3 - s2) * h * self.slope[i + 1]
    }
}

/// Radial inverse transform for the density ρ⁻² dm on a window.
#[derive(Debug, Clone)]
pub struct PoissonSampler {
    window: Window,
    mass: f64,
    inverse: Option<MonotoneCubic>,
}

impl PoissonSampler {
    pub fn new(rf: &RadiusField, window: Window) -> Result<Self> {
        window.validate()?;
        let (a, b) = (window.inner_radius(), window.outer_radius());
        if b <= a {
            return Ok(Self { window, mass: 0.0, inverse: None });
        }
        let table = rf.tabulate(b, DEFAULT_TABLE_STEP)?;
        let rule = GaussLegendre::new(8);
        let nodes: Vec<f64> = (0..POISSON_NODES).map(|i| a + (b - a) * i as f64 / (POISSON_NODES - 1) as f64).collect();
        let mut cumulative = Vec::with_capacity(POISSON_NODES);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in nodes.windows(2) {
            acc += rule.integrate(w[0], w[1], |t| {
                let r = table.eval(t);
                2.0 * PI * t / (r * r)
            });
            cumulative.push(acc);
        }
        for i in 1..cumulative.len() {
            if !(cumulative[i] > cumulative[i - 1]) {
                return Err(Error::TableNotMonotone { index: i });
            }
        }
        Ok(Self { window, mass: acc, inverse: Some(MonotoneCubic::new(cumulative, nodes)) })
    }

    /// σ_φ(window) = ∫_window ρ⁻² dm.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<Complex64> {
        let inverse = match (&self.inverse, self.mass > 0.0) {
            (Some(inv), true) => inv,
            _ => return Vec::new(),
        };
        let count = Poisson::new(self.mass).expect("positive mean").sample(rng) as usize;
        let (a, b) = (self.window.inner_radius(), self.window.outer_radius());
        (0..count)
            .map(|_| {
                let t = inverse.eval(rng.random::<f64>() * self.mass).clamp(a, b);
                Complex64::from_polar(t, 2.0 * PI * rng.random::<f64>())
            })
            .collect()
    }
}

/// Poisson process with intensity ρ⁻² dm on the window.
pub fn sample_poisson(rf: &RadiusField, window: Window, seed: u64) -> Result<PointConfiguration> {
    let sampler = PoissonSampler::new(rf, window)?;
    let mut rng = rng_for(seed, 0);
    Ok(PointConfiguration {
        points: sampler.sample(&mut rng),
        window,
        process: ProcessTag::Poisson,
        seed,
        kernel_rank: None,
    })
}

/// Eigenvalues of an N×N matrix with independent complex Gaussian entries
/// of variance ½ (real and imaginary parts each of variance ¼), whose joint
/// density is ∝ Π|z_i − z_j|² e^{−2Σ|z_i|²}.
pub fn ginibre_oracle(n: usize, seed: u64) -> Result<PointConfiguration> {
    ginibre_oracle_with(n, seed, &mut rng_for(seed, 0))
}

/// As [`ginibre_oracle`] with an explicit generator.
pub fn ginibre_oracle_with<R: Rng>(n: usize, seed: u64, rng: &mut R) -> Result<PointConfiguration> {
    if n == 0 || n > 4096 {
        return Err(Error::InvalidParameter(format!("Ginibre size must be in 1..=4096, got {n}")));
    }
    let normal = Normal::new(0.0, 0.5).expect("valid normal");
    let m = DMatrix::<Complex64>::from_fn(n, n, |_, _| Complex64::new(normal.sample(rng), normal.sample(rng)));
    let points: Vec<Complex64> =
        m.try_schur(1e-14, 100 * n).and_then(|s| s.eigenvalues()).ok_or(Error::Eigensolver)?.iter().copied().collect();
    let radius = points.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(PointConfiguration {
        points,
        window: Window::Disk { radius },
        process: ProcessTag::GinibreOracle,
        seed,
        kernel_rank: Some(n),
    })
}

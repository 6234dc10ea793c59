use std::f64::consts::PI;
use std::sync::OnceLock;

use fockdpp_core::analysis::{cell_counts, nearest_neighbor_distances};
use fockdpp_core::kernel::{metric_db_proxy, metric_dk, TruncatedKernel};
use fockdpp_core::samplers::{PointConfiguration, ProcessTag, Window};
use fockdpp_core::spectra::{
    bernoulli_probabilities, cell_probabilities, poisson_cell_prob, restriction_matrix, spectrum, CellPartition,
};
use fockdpp_core::weights::{RadiusField, Weight};
use fockdpp_core::Complex64;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn field(alpha: f64) -> RadiusField {
    RadiusField::new(Weight::power(alpha).unwrap())
}

fn kernel_15() -> &'static (RadiusField, TruncatedKernel) {
    static K: OnceLock<(RadiusField, TruncatedKernel)> = OnceLock::new();
    K.get_or_init(|| {
        let rf = field(1.5);
        let k = TruncatedKernel::for_window(&rf, 10.0, 1e-12).unwrap();
        (rf, k)
    })
}

fn polar(r: f64, turns: f64) -> Complex64 {
    Complex64::from_polar(r, 2.0 * PI * turns)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rho_is_one_lipschitz(r1 in 0.0f64..30.0, t1 in 0.0f64..1.0, r2 in 0.0f64..30.0, t2 in 0.0f64..1.0, a in 0usize..3) {
        let rf = field([1.0, 1.5, 3.0][a]);
        let (z, w) = (polar(r1, t1), polar(r2, t2));
        let d = (rf.rho(z).unwrap() - rf.rho(w).unwrap()).abs();
        prop_assert!(d <= (z - w).norm() + 1e-7);
    }

    #[test]
    fn kernel_is_hermitian_and_cauchy_schwarz(r1 in 0.0f64..10.0, t1 in 0.0f64..1.0, r2 in 0.0f64..10.0, t2 in 0.0f64..1.0) {
        let (_, k) = kernel_15();
        let (z, w) = (polar(r1, t1), polar(r2, t2));
        let a = k.log_eval(z, w).unwrap();
        let b = k.log_eval(w, z).unwrap();
        prop_assert!((a.re - b.re).abs() <= 1e-10 * a.re.abs().max(1.0));
        let phase = (a.im + b.im).sin().abs();
        prop_assert!(phase <= 1e-8);
        let cs = 0.5 * (k.log_diag(z).unwrap() + k.log_diag(w).unwrap());
        prop_assert!(a.re <= cs + 1e-10 * cs.abs().max(1.0));
    }

    #[test]
    fn bernoulli_probabilities_are_consistent(lambdas in prop::collection::vec(0.0f64..=1.0, 0..40)) {
        let p = bernoulli_probabilities(&lambdas);
        prop_assert!((p.p0 + p.p1 + p.p_geq2_exact - 1.0).abs() <= 1e-10);
        prop_assert!(p.p0 >= 0.0 && p.p1 >= 0.0 && p.p_geq2_exact >= 0.0);
        prop_assert!(p.pair_intensity >= 0.0);
        // X(X−1)/2 ≥ 1 on {X ≥ 2}
        prop_assert!(p.p_geq2_exact <= 0.5 * p.pair_intensity + 1e-15);
    }

    #[test]
    fn second_order_expansion_holds_for_small_traces(raw in prop::collection::vec(0.0f64..1.0, 1..30), total in 0.0f64..0.2) {
        let s: f64 = raw.iter().sum();
        prop_assume!(s > 0.0);
        let lambdas: Vec<f64> = raw.iter().map(|v| v / s * total).collect();
        let p = bernoulli_probabilities(&lambdas);
        prop_assert!((p.p_geq2_exact - p.p_geq2_second_order).abs() <= 2.0 * total.powi(3));
    }

    #[test]
    fn poisson_second_order_remainder(p in 0.0f64..1.0) {
        let c = poisson_cell_prob(p).unwrap();
        prop_assert!((c.p_geq2_exact - 0.5 * p * p).abs() <= p.powi(3) / 3.0 + 1e-17);
    }

    #[test]
    fn counts_are_conserved(pts in prop::collection::vec((0.0f64..7.999, 0.0f64..1.0), 0..200)) {
        let points: Vec<Complex64> = pts.iter().map(|&(r, t)| polar(r, t)).collect();
        let n = points.len();
        let config = PointConfiguration { points, window: Window::Disk { radius: 8.0 }, process: ProcessTag::Poisson, seed: 0, kernel_rank: None };
        for p in [CellPartition::standard(1.0, 8).unwrap(), CellPartition::shifted(1.0, 8).unwrap(), CellPartition::standard(0.5, 16).unwrap()] {
            let counts = cell_counts(&config, &p).unwrap();
            prop_assert_eq!(counts.values().sum::<usize>(), n);
        }
    }
}

#[test]
fn gram_matrix_is_positive_semidefinite() {
    let (_, k) = kernel_15();
    let pts: Vec<Complex64> =
        (0..32).map(|i| polar(10.0 * ((i as f64 * 0.618).fract()).sqrt(), i as f64 * 0.377)).collect();
    // Gram of normalized kernel columns, which shares the sign pattern of the spectrum
    let logd: Vec<f64> = pts.iter().map(|z| k.log_diag(*z).unwrap()).collect();
    let g = DMatrix::<Complex64>::from_fn(32, 32, |i, j| {
        let l = k.log_eval(pts[i], pts[j]).unwrap();
        (l - Complex64::new(0.5 * (logd[i] + logd[j]), 0.0)).exp()
    });
    let eig = g.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    assert!(min >= -1e-8 * max, "{min} {max}");
}

#[test]
fn monomials_are_reproduced() {
    let rf = field(2.0);
    let k = TruncatedKernel::with_rank(&rf, 32, 9.0).unwrap();
    // polar quadrature of ∫ ζ^m K(z, ζ) dμ(ζ): Gauss–Legendre panels in r, trapezoid in θ
    let gl = fockdpp_core::quad::GaussLegendre::new(24);
    let radial = gl.composite(0.0, 9.0, 36);
    let thetas = 96;
    for &(z, m) in
        &[(Complex64::new(0.7, -1.1), 3usize), (Complex64::new(-2.0, 0.5), 10), (Complex64::new(0.0, 4.0), 15)]
    {
        let mut acc = Complex64::new(0.0, 0.0);
        for &(r, wr) in &radial {
            let w_mu = k.basis.log_mu_density(r).exp() * r * wr * 2.0 * PI / thetas as f64;
            for j in 0..thetas {
                let zeta = polar(r, j as f64 / thetas as f64);
                acc += zeta.powu(m as u32) * k.eval(z, zeta).unwrap() * w_mu;
            }
        }
        let exact = z.powu(m as u32);
        assert!((acc - exact).norm() <= 1e-6 * exact.norm(), "{m}: {acc} vs {exact}");
    }
}

#[test]
fn dk_local_equivalence_bracket_is_stable() {
    let (rf, k) = kernel_15();
    let mut lows = Vec::new();
    let mut highs = Vec::new();
    for i in 0..24 {
        let z = polar(0.5 + 9.0 * i as f64 / 23.0 * 0.9, i as f64 * 0.137);
        let rho = rf.rho(z).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for j in 1..=8 {
            for dir in 0..4 {
                let w = z + polar(0.5 * rho * j as f64 / 8.0, dir as f64 / 4.0 + 0.05);
                if w.norm() > k.window_radius {
                    continue;
                }
                let ratio = metric_dk(k, z, w).unwrap() / ((z - w).norm() / rho);
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
        }
        lows.push(lo);
        highs.push(hi);
    }
    let spread = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max) / v.iter().cloned().fold(f64::MAX, f64::min);
    assert!(lows.iter().all(|&c| c > 0.0));
    assert!(spread(&lows) <= 2.0, "{lows:?}");
    assert!(spread(&highs) <= 2.0, "{highs:?}");
}

#[test]
fn normalized_kernel_decays_in_the_bergman_proxy() {
    let (rf, k) = kernel_15();
    let z = Complex64::new(2.0, 0.0);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for j in 1..=12 {
        let w = z + polar(0.5 * j as f64, 0.25);
        let l = k.log_eval(z, w).unwrap().re - 0.5 * (k.log_diag(z).unwrap() + k.log_diag(w).unwrap());
        xs.push(metric_db_proxy(rf, z, w).unwrap());
        ys.push(l);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    // fitted ε = −slope is reported, only its sign is a property
    println!("fitted decay exponent {:.3}", -slope);
    assert!(-slope > 0.0);
}

#[test]
fn spectra_of_swept_cells_are_valid() {
    let (_, k) = kernel_15();
    for c in CellPartition::standard(1.0, 10).unwrap().cells() {
        let s = spectrum(&restriction_matrix(k, &c).unwrap()).unwrap();
        assert!(s.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        assert!(s.eigenvalues.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(s.hs_norm_sq <= s.trace * (1.0 + 1e-12));
        let sum: f64 = s.eigenvalues.iter().sum();
        assert!((sum - s.trace).abs() <= 1e-10 * s.trace.max(1.0));
        let p = cell_probabilities(&s);
        assert!((p.p0 + p.p1 + p.p_geq2_exact - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn nearest_neighbor_distances_of_a_lattice() {
    let pts: Vec<Complex64> = (0..10).flat_map(|i| (0..10).map(move |j| Complex64::new(i as f64, j as f64))).collect();
    assert!(nearest_neighbor_distances(&pts).iter().all(|&d| (d - 1.0).abs() < 1e-15));
}

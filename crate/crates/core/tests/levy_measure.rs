use ipde_core::levy::{DensityShape, Interval, LevyMeasure, TruncatedMeasure};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Adaptive Simpson with Richardson correction.
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rule<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = rule(f, a, fa, m, fm);
        let (rm, frm, right) = rule(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = rule(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 50)
}

fn power_on_unit(alpha: f64) -> LevyMeasure {
    LevyMeasure::density(DensityShape::Power { c: 1.0, alpha }, &[Interval::new(0.0, 1.0)]).unwrap()
}

/// Reference `∫_{|e| ≥ cut} φ ρ de` on a symmetric `c|e|^(−1−α)` density over `[−1, 1]`.
fn stable_reference<F: Fn(f64) -> f64>(c: f64, alpha: f64, cut: f64, phi: F) -> f64 {
    let rho = |e: f64| c * e.abs().powf(-1.0 - alpha);
    simpson(&|e| phi(e) * rho(e), cut, 1.0, 1e-13) + simpson(&|e| phi(e) * rho(e), -1.0, -cut, 1e-13)
}

#[test]
fn mass_above_agrees_with_adaptive_quadrature() {
    let lam = power_on_unit(0.5);
    let rho = |e: f64| e.powf(-1.5);
    let oracle = simpson(&rho, 0.5, 1.0, 1e-14);
    assert!((oracle - 2.0 * (2f64.sqrt() - 1.0)).abs() < 1e-12);
    assert!((lam.mass_above(0.5).unwrap() - oracle).abs() < 1e-10);
    assert!(lam.mass_above(0.0).is_err());
    assert_eq!(lam.mass_above(2.0).unwrap(), 0.0);
}

#[test]
fn truncation_and_integration_match_antiderivatives() {
    let m = power_on_unit(0.5).truncate(4).unwrap();
    let mass = simpson(&|e: f64| e.powf(-1.5), 0.25, 1.0, 1e-14);
    assert!((mass - 2.0).abs() < 1e-12);
    assert!((m.total_mass() - mass).abs() < 1e-10);
    let second = simpson(&|e: f64| e.sqrt(), 0.25, 1.0, 1e-14);
    assert!((second - 7.0 / 12.0).abs() < 1e-12);
    assert!((m.integrate(|e| e * e).unwrap() - second).abs() < 1e-10);
    assert!(power_on_unit(0.5).truncate(0).is_err());
    assert_eq!(power_on_unit(0.5).truncate(1).unwrap().total_mass(), 0.0);
}

#[test]
fn small_jump_integral_is_accurate_for_every_cutoff() {
    for (c, alpha) in [(0.1, 0.5), (1.0, 1.5), (0.3, 0.1)] {
        let lam = LevyMeasure::stable_like(c, alpha, true).unwrap();
        for k in [1, 2, 8, 64, 512] {
            let m = lam.truncate(k).unwrap();
            let phi = |e: f64| e.abs().min(1.0).powi(2);
            let got = m.integrate(phi).unwrap();
            let want = stable_reference(c, alpha, 1.0 / k as f64, phi);
            assert!(got.is_finite());
            let rel = if want == 0.0 {
                got.abs()
            } else {
                (got - want).abs() / want
            };
            assert!(rel < 1e-6, "c={c} α={alpha} k={k}: {got} vs {want}");
        }
    }
    let gauss = LevyMeasure::density(
        DensityShape::Gaussian {
            c: 1.0,
            mean: -0.1,
            sd: 0.2,
        },
        &[Interval::new(-1.0, 0.0), Interval::new(0.0, 1.0)],
    )
    .unwrap();
    let rho = |e: f64| (-0.5 * ((e + 0.1) / 0.2).powi(2)).exp() / (0.2 * (2.0 * std::f64::consts::PI).sqrt());
    let m = gauss.truncate(16).unwrap();
    let want =
        simpson(&|e| e * e * rho(e), 1.0 / 16.0, 1.0, 1e-14) + simpson(&|e| e * e * rho(e), -1.0, -1.0 / 16.0, 1e-14);
    assert!((m.integrate(|e| e * e).unwrap() - want).abs() / want < 1e-6);
}

#[test]
fn atomic_sampling_has_poisson_counts_and_multinomial_marks() {
    let m = LevyMeasure::atomic(&[(1.0, 2.0), (-1.0, 1.0)])
        .unwrap()
        .truncate(1)
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let slices = 100_000;
    let (mut jumps, mut up) = (0usize, 0usize);
    for _ in 0..slices {
        let marks = m.sample_jumps(1.0, &mut rng).unwrap();
        jumps += marks.len();
        up += marks.iter().filter(|&&e| e == 1.0).count();
        assert!(marks.iter().all(|&e| e == 1.0 || e == -1.0));
    }
    let mean = jumps as f64 / slices as f64;
    assert!(
        (mean - 3.0).abs() < 3.0 * (3.0 / slices as f64).sqrt(),
        "mean count {mean}"
    );
    let frac = up as f64 / jumps as f64;
    let p = 2.0 / 3.0;
    assert!(
        (frac - p).abs() < 3.0 * (p * (1.0 - p) / jumps as f64).sqrt(),
        "share of +1 marks {frac}"
    );
}

#[test]
fn density_sampling_rate_matches_truncated_mass() {
    let m = power_on_unit(0.5).truncate(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let slices = 1_000_000;
    let mut jumps = 0usize;
    for _ in 0..slices {
        jumps += m.sample_jumps(0.01, &mut rng).unwrap().len();
    }
    let mean = jumps as f64 / slices as f64;
    assert!(
        (mean - 0.02).abs() < 3.0 * (0.02 / slices as f64).sqrt(),
        "mean count {mean}"
    );
}

#[test]
fn empty_measure_never_jumps() {
    let m = LevyMeasure::zero().truncate(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(m.sample_jumps(10.0, &mut rng).unwrap().is_empty());
}

/// Equal-probability bin edges on `[cut, 1]` for the positive half of a
/// symmetric power density, found by bisection on the antiderivative.
fn positive_quantiles(alpha: f64, cut: f64, bins: usize) -> Vec<f64> {
    let cdf = |x: f64| (cut.powf(-alpha) - x.powf(-alpha)) / (cut.powf(-alpha) - 1.0);
    (0..=bins)
        .map(|b| {
            let target = b as f64 / bins as f64;
            let (mut lo, mut hi) = (cut, 1.0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if cdf(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect()
}

#[test]
fn sampled_marks_pass_chi_square() {
    // 10 equal-mass bins per side of the symmetric density
    let (alpha, k) = (0.5, 4);
    let m = LevyMeasure::stable_like(1.0, alpha, true).unwrap().truncate(k).unwrap();
    let edges = positive_quantiles(alpha, 1.0 / k as f64, 10);
    let mut counts = [0usize; 20];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut n = 0usize;
    while n < 1_000_000 {
        for e in m.sample_jumps(1.0, &mut rng).unwrap() {
            let a = e.abs();
            let b = edges.partition_point(|&q| q <= a).clamp(1, 10) - 1;
            counts[if e > 0.0 { 10 + b } else { b }] += 1;
            n += 1;
        }
    }
    let expected = n as f64 / 20.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // upper 0.001 point of χ² with 19 degrees of freedom
    assert!(chi2 < 43.82, "χ² = {chi2}, counts {counts:?}");
}

fn sample_measure(idx: usize) -> TruncatedMeasure {
    let lam = match idx {
        0 => LevyMeasure::stable_like(0.1, 0.5, true).unwrap(),
        1 => LevyMeasure::stable_like(1.0, 1.2, false).unwrap(),
        _ => LevyMeasure::atomic(&[(0.3, 1.0), (-0.05, 2.0), (0.7, 0.5)]).unwrap(),
    };
    lam.truncate(16).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mass_above_is_non_increasing(a in 1e-3f64..1.5, b in 1e-3f64..1.5, alpha in 0.05f64..1.9) {
        let lam = LevyMeasure::stable_like(0.5, alpha, true).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(lam.mass_above(lo).unwrap() >= lam.mass_above(hi).unwrap());
    }

    #[test]
    fn truncated_mass_grows_with_k(k in 1u32..200, alpha in 0.05f64..1.9) {
        let lam = LevyMeasure::stable_like(0.5, alpha, true).unwrap();
        let m1 = lam.truncate(k).unwrap().total_mass();
        let m2 = lam.truncate(k + 1).unwrap().total_mass();
        prop_assert!(m1.is_finite());
        prop_assert!(m2 >= m1);
    }

    #[test]
    fn integrate_is_linear(idx in 0usize..3, a in -3.0f64..3.0, b in -3.0f64..3.0, w in 0.1f64..5.0) {
        let m = sample_measure(idx);
        let phi = |e: f64| (w * e).sin();
        let psi = |e: f64| e * e - 0.3 * e;
        let lhs = m.integrate(|e| a * phi(e) + b * psi(e)).unwrap();
        let rhs = a * m.integrate(phi).unwrap() + b * m.integrate(psi).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn symmetric_measure_kills_odd_integrands(k in 1u32..300, p in 1i32..4) {
        let m = LevyMeasure::stable_like(0.7, 0.8, true).unwrap().truncate(k).unwrap();
        let odd = m.compensator_drift(|e| e.powi(2 * p - 1)).unwrap();
        prop_assert!(odd.abs() <= 1e-10);
    }
}

//! Independent reference computations for the special functions, the
//! lattice error probability and the repetition-code tail.

use cvqdc_core::analytics::{stolen_info_basic, survival_prob};
use cvqdc_core::gauss_num::{
    binary_entropy, binary_information, chi2_cdf, chi2_quantile, chi2_upper_quantile, gaussian_interval_prob,
    regularized_lower_gamma, RngStream, Variance,
};
use cvqdc_core::lattice::{decode_bit, intrinsic_error};
use cvqdc_core::rep_code::{critical_point, uncorrectable_prob, RepCode};

fn var(v: f64) -> Variance {
    Variance::new(v).unwrap()
}

/// Composite Simpson rule with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn normal_density(x: f64, variance: f64) -> f64 {
    (-x * x / (2.0 * variance)).exp() / (2.0 * std::f64::consts::PI * variance).sqrt()
}

/// P(k, x) for integer k by the Poisson sum 1 − e^{−x} Σ_{j<k} x^j/j!,
/// accumulated in log space.
fn poisson_lower_gamma(k: u64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let mut log_term = -x;
    let mut max = log_term;
    let mut logs = Vec::with_capacity(k as usize);
    for j in 0..k {
        if j > 0 {
            log_term += x.ln() - (j as f64).ln();
        }
        max = max.max(log_term);
        logs.push(log_term);
    }
    let tail: f64 = logs.iter().map(|l| (l - max).exp()).sum::<f64>() * max.exp();
    1.0 - tail
}

/// The (1 − tail) quantile of χ²_{2k} by plain bisection on the Poisson-sum
/// upper tail.
fn bisect_chi2_upper(k: u64, tail: f64) -> f64 {
    let upper = |x: f64| {
        let mut log_term = -x / 2.0;
        let mut logs = vec![log_term];
        for j in 1..k {
            log_term += (x / 2.0).ln() - (j as f64).ln();
            logs.push(log_term);
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        logs.iter().map(|l| (l - max).exp()).sum::<f64>() * max.exp()
    };
    let (mut lo, mut hi) = (0.0, 10.0 * (2 * k) as f64 + 200.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if upper(mid) > tail {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// 1 − H(1/2 + δ) = Σ_{k≥1} (2δ)^{2k} / (2k(2k − 1) ln 2).
fn information_series(p: f64) -> f64 {
    let y = (2.0 * (p - 0.5)).powi(2);
    let mut sum = 0.0;
    let mut power = 1.0;
    for k in 1..4000 {
        power *= y;
        let kf = k as f64;
        let term = power / (2.0 * kf * (2.0 * kf - 1.0));
        sum += term;
        if term < 1e-19 {
            break;
        }
    }
    sum / std::f64::consts::LN_2
}

/// P_n(p) by enumerating all 2ⁿ error patterns.
fn enumerate_pn(n: u32, p: f64) -> f64 {
    let mut total = 0.0;
    for pattern in 0u32..(1 << n) {
        let flips = pattern.count_ones();
        if flips > n / 2 {
            total += p.powi(flips as i32) * (1.0 - p).powi((n - flips) as i32);
        }
    }
    total
}

/// P_n(p) from a Pascal-triangle binomial table.
fn pascal_pn(n: u32, p: f64) -> f64 {
    let mut row = vec![1.0f64];
    for _ in 0..n {
        let mut next = vec![1.0; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    (n / 2 + 1..=n)
        .map(|t| row[t as usize] * p.powi(t as i32) * (1.0 - p).powi((n - t) as i32))
        .sum()
}

#[test]
fn interval_probability_matches_quadrature() {
    let got = gaussian_interval_prob(1.0, 3.0, var(1.0)).unwrap();
    let oracle = simpson(|x| normal_density(x, 1.0), 1.0, 3.0, 2000);
    assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    assert!((got - 0.157_305).abs() < 1e-6);
    for (a, b, v) in [(-0.3, 0.8, 0.5), (2.0, 7.0, 6.0), (-4.0, -1.0, 26.0)] {
        let oracle = simpson(|x| normal_density(x, v), a, b, 4000);
        assert!((gaussian_interval_prob(a, b, var(v)).unwrap() - oracle).abs() < 1e-12);
    }
}

#[test]
fn lower_gamma_matches_poisson_series() {
    let got = regularized_lower_gamma(5.0, 4.5).unwrap();
    assert!((got - poisson_lower_gamma(5, 4.5)).abs() < 1e-14);
    assert!((got - 0.467_896).abs() < 1e-6);
    for m in 1..=20u64 {
        for x in [0.1, 1.0, 3.7, 12.0, 25.0, 40.0] {
            let got = regularized_lower_gamma(m as f64, x).unwrap();
            let oracle = poisson_lower_gamma(m, x);
            assert!((got - oracle).abs() < 1e-13, "M={m} x={x}: {got} vs {oracle}");
        }
    }
}

#[test]
fn chi2_quantile_matches_bisection() {
    let v = chi2_quantile(2, 0.95).unwrap();
    assert!((v - bisect_chi2_upper(1, 0.05)).abs() < 1e-10);
    assert!((v - 5.991_465).abs() < 1e-6);
    for (k, tail) in [(5, 0.05), (50, 5e-7), (500, 1e-3), (5000, 5e-7)] {
        let got = chi2_upper_quantile(2 * k, tail).unwrap();
        let oracle = bisect_chi2_upper(k, tail);
        assert!(((got - oracle) / oracle).abs() < 1e-10, "k={k}: {got} vs {oracle}");
    }
}

#[test]
fn entropy_matches_series() {
    let h = binary_entropy(0.11).unwrap();
    assert!((h - (1.0 - information_series(0.11))).abs() < 1e-14);
    assert!((h - 0.499_916).abs() < 1e-6);
    for p in [0.01, 0.3, 0.49, 0.499_999, 0.75] {
        assert!(
            (binary_information(p).unwrap() - information_series(p)).abs() < 1e-14,
            "p={p}"
        );
    }
}

#[test]
fn intrinsic_error_matches_quadrature_and_sampling() {
    // Quadrature over the odd cells on both sides.
    for (omega, delta) in [(2.57, 1.0), (1.0, 1.0), (1.5, 2.0), (1.0, 3.5)] {
        let mut oracle = 0.0;
        for j in 0..60 {
            let lo = (4 * j + 1) as f64 * omega;
            oracle += 2.0 * simpson(|x| normal_density(x, delta), lo, lo + 2.0 * omega, 2000);
        }
        let got = intrinsic_error(omega, var(delta)).unwrap();
        assert!((got - oracle).abs() < 1e-12, "({omega}, {delta}): {got} vs {oracle}");
    }

    // Flip-rate sampling at (1.5, 2).
    let (omega, delta) = (1.5, 2.0);
    let expected = intrinsic_error(omega, var(delta)).unwrap();
    let mut rng = RngStream::new(7, 0);
    let trials = 1_000_000u64;
    let mut flips = 0u64;
    for i in 0..trials {
        let center = 2.0 * omega * ((i % 7) as f64 - 3.0);
        let x = cvqdc_core::gauss_num::sample_gaussian(center, delta, &mut rng);
        flips += u64::from(decode_bit(x, omega) != decode_bit(center, omega));
    }
    let rate = flips as f64 / trials as f64;
    let sd = (expected * (1.0 - expected) / trials as f64).sqrt();
    assert!((rate - expected).abs() < 3.0 * sd, "{rate} vs {expected}");
}

#[test]
fn intrinsic_error_reference_values() {
    let basic = intrinsic_error(2.57, Variance::HETERODYNE).unwrap();
    assert!((basic - 0.0100).abs() <= 0.0005, "{basic}");
    let coded = intrinsic_error(1.0, Variance::HETERODYNE).unwrap();
    assert!((coded - 0.32).abs() <= 0.01, "{coded}");
    assert!(intrinsic_error(10.0, Variance::HETERODYNE).unwrap() < 1e-15);
}

#[test]
fn uncorrectable_prob_matches_enumeration() {
    let code3 = RepCode::new(3).unwrap();
    assert!((uncorrectable_prob(code3, 0.1).unwrap() - 0.028).abs() < 1e-15);
    for n in [1, 3, 5, 7, 11, 15] {
        for p in [0.0, 0.01, 0.1, 0.32, 0.5, 0.77, 1.0] {
            let got = uncorrectable_prob(RepCode::new(n).unwrap(), p).unwrap();
            assert!((got - enumerate_pn(n, p)).abs() < 1e-13, "n={n} p={p}");
        }
    }
    for n in [35, 103] {
        for p in [0.05, 0.2, 0.32, 0.38, 0.45] {
            let got = uncorrectable_prob(RepCode::new(n).unwrap(), p).unwrap();
            let oracle = pascal_pn(n, p);
            assert!(
                (got - oracle).abs() < 1e-13 * oracle.max(1e-3),
                "n={n} p={p}: {got} vs {oracle}"
            );
        }
    }
}

#[test]
fn critical_points() {
    let p35 = critical_point(RepCode::new(35).unwrap(), 0.01).unwrap();
    assert!((p35 - 0.32).abs() <= 0.02, "{p35}");
    let p103 = critical_point(RepCode::new(103).unwrap(), 0.01).unwrap();
    assert!((pascal_pn(103, p103) - 0.01).abs() < 1e-9);
    assert!((p103 - 0.38).abs() < 0.01, "{p103}");
    assert!((critical_point(RepCode::IDENTITY, 0.07).unwrap() - 0.07).abs() < 1e-10);
    let logical = uncorrectable_prob(
        RepCode::new(35).unwrap(),
        intrinsic_error(1.0, Variance::HETERODYNE).unwrap(),
    )
    .unwrap();
    assert!((logical - 0.01).abs() <= 0.005, "{logical}");
}

#[test]
fn survival_single_mode_closed_form() {
    let r: f64 = 5e-7;
    let expected = 1.0 - (-(-2.0 * r.ln()) / 4.0).exp();
    assert!((survival_prob(1, 1.0, r).unwrap() - expected).abs() < 1e-14);
}

#[test]
fn survival_matches_poisson_series() {
    let r = 0.05;
    for m in [2u64, 7, 20] {
        let v = bisect_chi2_upper(m, r);
        for sigma2 in [0.0, 0.3, 1.0] {
            let oracle = poisson_lower_gamma(m, v / (2.0 * (1.0 + sigma2)));
            assert!((survival_prob(m, sigma2, r).unwrap() - oracle).abs() < 1e-9);
        }
    }
}

#[test]
fn chi2_cdf_round_trip_large_dof() {
    for (dof, p) in [(2_000u64, 0.3), (200_000, 1.0 - 5e-7), (1_000_000, 0.999)] {
        let x = chi2_quantile(dof, p).unwrap();
        assert!((chi2_cdf(dof, x).unwrap() - p).abs() < 1e-10 * p.max(1e-3));
    }
}

#[test]
fn stolen_info_limits() {
    // Δ_E → 1 as σ² → ∞.
    let limit = 2.0 * binary_information(intrinsic_error(2.57, Variance::HETERODYNE).unwrap()).unwrap();
    let big = stolen_info_basic(1e9, 2.57).unwrap();
    assert!((big - limit).abs() < 1e-6);
    assert!((limit - 1.84).abs() < 0.01, "{limit}");
    assert!(stolen_info_basic(0.01, 2.57).unwrap() < 0.1);
}

//! Sampling checks: every simulated rate against its closed form at 3σ.
//! Seeds are fixed, so these are deterministic.

use cvqdc_core::adversary::{AttackModel, IdentityChannel, UgqcmAttack};
use cvqdc_core::analytics::survival_prob;
use cvqdc_core::gauss_num::{chi2_cdf, gaussian_interval_prob, sample_gaussian, RngStream, Variance};
use cvqdc_core::harness::{estimate_ber, estimate_survival, run_sessions, EstimateWithCI};
use cvqdc_core::lattice::intrinsic_error;
use cvqdc_core::protocol::{alice_prepare_cm, bob_measure, choose_mode, Mode, ProtocolConfig};
use cvqdc_core::rep_code::{majority_decode, uncorrectable_prob, RepCode};

fn var(v: f64) -> Variance {
    Variance::new(v).unwrap()
}

/// Kolmogorov–Smirnov distance between `samples` and `cdf`.
fn ks_distance(mut samples: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the KS statistic.
fn ks_critical(n: usize) -> f64 {
    1.627_6 / (n as f64).sqrt()
}

fn assert_within_3sd(est: &EstimateWithCI, expected: f64, what: &str) {
    assert!(
        est.z_score(expected) < 3.0,
        "{what}: {} vs {expected} (z = {:.2})",
        est.estimate,
        est.z_score(expected)
    );
}

fn sample_moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

/// |s² − σ²| < 3·σ²·√(2/(n−1)).
fn assert_variance(xs: &[f64], expected: f64, what: &str) {
    let (_, s2) = sample_moments(xs);
    let tol = 3.0 * expected * (2.0 / (xs.len() as f64 - 1.0)).sqrt();
    assert!((s2 - expected).abs() < tol, "{what}: {s2} vs {expected}");
}

#[test]
fn gaussian_sampler_passes_ks() {
    let mut rng = RngStream::new(11, 0);
    let xs: Vec<f64> = (0..100_000).map(|_| sample_gaussian(0.0, 1.0, &mut rng)).collect();
    let d = ks_distance(xs, |x| {
        gaussian_interval_prob(f64::NEG_INFINITY, x, Variance::HETERODYNE).unwrap()
    });
    assert!(d < ks_critical(100_000), "{d}");
}

#[test]
fn gaussian_sampler_moments() {
    let mut rng = RngStream::new(12, 0);
    let xs: Vec<f64> = (0..1_000_000).map(|_| sample_gaussian(0.0, 1.0, &mut rng)).collect();
    let (mean, s2) = sample_moments(&xs);
    assert!(mean.abs() < 0.005 && (s2 - 1.0).abs() < 0.01, "{mean} {s2}");
    assert_eq!(sample_gaussian(3.5, 0.0, &mut rng), 3.5);
}

#[test]
fn mode_choice_frequency() {
    let cfg = ProtocolConfig::basic();
    let mut rng = RngStream::new(13, 0);
    let n = 100_000u64;
    let cm = (0..n).filter(|_| choose_mode(&cfg, &mut rng) == Mode::Control).count() as u64;
    assert_within_3sd(&EstimateWithCI::wilson(cm, n), 69.0 / 70.0, "control fraction");
}

#[test]
fn quadrature_variances() {
    let cfg = ProtocolConfig::basic();
    let mut rng = RngStream::new(14, 0);
    let mut signal_q = Vec::new();
    let mut bob_res = Vec::new();
    let mut eve_res = Vec::new();
    let attack = UgqcmAttack::new(0.3).unwrap();
    for _ in 0..100_000 {
        let s = alice_prepare_cm(&cfg, &mut rng);
        signal_q.push(s.q);
        let beta = bob_measure(s, 1.0, &mut rng);
        bob_res.push(beta.q - s.q);
        let tap = attack.tap(s, Variance::HETERODYNE, &mut rng);
        eve_res.push(tap.eve_record.unwrap().p - s.p);
    }
    assert_variance(&signal_q, 100.0, "signal");
    let (mean, _) = sample_moments(&signal_q);
    assert!(mean.abs() < 3.0 * (100.0f64 / 1e5).sqrt());
    assert_variance(&bob_res, 1.0, "bob residual");
    assert_variance(&eve_res, 1.0 + 1.0 / 1.2, "eve residual");
}

#[test]
fn null_statistic_is_chi_square() {
    let cfg = ProtocolConfig::basic();
    for modes in [1u64, 10] {
        let stats: Vec<f64> = (0..10_000u64)
            .map(|i| {
                let mut rng = RngStream::new(15, i);
                (0..modes)
                    .map(|_| {
                        let s = alice_prepare_cm(&cfg, &mut rng);
                        let tap = IdentityChannel.tap(s, cfg.detection_variance, &mut rng);
                        let beta = bob_measure(s, tap.bob_variance.value(), &mut rng);
                        (beta - s).norm_sqr()
                    })
                    .sum()
            })
            .collect();
        let d = ks_distance(stats, |v| chi2_cdf(2 * modes, v).unwrap());
        assert!(d < ks_critical(10_000), "M={modes}: {d}");
    }
}

#[test]
fn bob_ber_matches_intrinsic_error() {
    let cfg = ProtocolConfig::basic();
    let est = estimate_ber(&cfg, &IdentityChannel, 50_000, 21).unwrap();
    assert!(est.eve.is_none());
    assert_within_3sd(
        &est.bob,
        intrinsic_error(2.57, Variance::HETERODYNE).unwrap(),
        "identity",
    );
    assert!(est.bob.contains(0.01) || (est.bob.estimate - 0.01).abs() < 0.0005);
    for sigma2 in [0.05, 1.0] {
        let est = estimate_ber(&cfg, &UgqcmAttack::new(sigma2).unwrap(), 50_000, 22).unwrap();
        assert_eq!(est.bob.trials, 100_000);
        assert_within_3sd(&est.bob, intrinsic_error(2.57, var(1.0 + sigma2)).unwrap(), "bob");
    }
}

#[test]
fn eve_ber_matches_intrinsic_error() {
    let cfg = ProtocolConfig::basic();
    for sigma2 in [0.05, 0.1, 0.3, 1.0] {
        let est = estimate_ber(&cfg, &UgqcmAttack::new(sigma2).unwrap(), 50_000, 23).unwrap();
        let expected = intrinsic_error(2.57, var(1.0 + 1.0 / (4.0 * sigma2))).unwrap();
        assert_within_3sd(&est.eve.unwrap(), expected, &format!("eve σ²={sigma2}"));
    }
    // Bob and Eve see the same noise at σ² = 1/2.
    let est = estimate_ber(&cfg, &UgqcmAttack::new(0.5).unwrap(), 50_000, 24).unwrap();
    let (b, e) = (est.bob, est.eve.unwrap());
    let pooled = (b.successes + e.successes) as f64 / (2 * b.trials) as f64;
    let sd = (2.0 * pooled * (1.0 - pooled) / b.trials as f64).sqrt();
    assert!((b.estimate - e.estimate).abs() < 3.0 * sd);
    // Almost nothing leaks at σ² = 0.01.
    let est = estimate_ber(&cfg, &UgqcmAttack::new(0.01).unwrap(), 50_000, 25).unwrap();
    assert!((est.eve.unwrap().estimate - 0.5).abs() < 0.02);
}

#[test]
fn coded_logical_errors() {
    let cfg = ProtocolConfig::coded();
    let code = cfg.code;
    let est = estimate_ber(&cfg, &IdentityChannel, 5_000, 31).unwrap();
    assert_eq!(est.bob_logical.trials, 10_000);
    let eps = intrinsic_error(1.0, Variance::HETERODYNE).unwrap();
    assert_within_3sd(&est.bob, eps, "coded physical");
    assert_within_3sd(
        &est.bob_logical,
        uncorrectable_prob(code, eps).unwrap(),
        "coded logical",
    );

    let est = estimate_ber(&cfg, &UgqcmAttack::new(0.3).unwrap(), 5_000, 32).unwrap();
    let eve_p = intrinsic_error(1.0, var(1.0 + 1.0 / 1.2)).unwrap();
    assert_within_3sd(
        &est.eve_logical.unwrap(),
        uncorrectable_prob(code, eve_p).unwrap(),
        "eve logical",
    );

    let est = estimate_ber(&cfg, &UgqcmAttack::new(0.05).unwrap(), 5_000, 33).unwrap();
    assert!((est.eve_logical.unwrap().estimate - 0.5).abs() < 0.03);
}

#[test]
fn majority_voting_matches_pn() {
    let mut rng = RngStream::new(41, 0);
    let trials = 100_000u64;
    for n in [3u32, 7, 35] {
        let code = RepCode::new(n).unwrap();
        for p in [0.1, 0.3, 0.45] {
            let mut word = vec![0u8; n as usize];
            let mut failures = 0u64;
            for _ in 0..trials {
                for b in word.iter_mut() {
                    *b = u8::from(rng.uniform() < p);
                }
                failures += u64::from(majority_decode(&word, code).unwrap() == 1);
            }
            let est = EstimateWithCI::wilson(failures, trials);
            assert_within_3sd(&est, uncorrectable_prob(code, p).unwrap(), &format!("n={n} p={p}"));
        }
    }
}

#[test]
fn survival_matches_closed_form() {
    let cfg = ProtocolConfig::basic();
    for sigma2 in [0.05, 0.3] {
        let est = estimate_survival(&cfg, sigma2, &[10, 100], 10_000, 51).unwrap();
        for e in &est {
            assert_within_3sd(&e.terminal, e.analytic, &format!("M={} σ²={sigma2}", e.modes));
            assert!(e.sequential.estimate <= e.terminal.estimate);
            assert_eq!(e.analytic, survival_prob(e.modes, sigma2, cfg.significance).unwrap());
        }
        assert!(est[1].sequential.estimate <= est[0].sequential.estimate);
    }
    let quiet = estimate_survival(&cfg, 0.05, &[100], 10_000, 52).unwrap()[0];
    let loud = estimate_survival(&cfg, 0.3, &[100], 10_000, 52).unwrap()[0];
    assert!(loud.sequential.estimate <= quiet.sequential.estimate);
}

#[test]
fn null_rejection_rate() {
    let mut cfg = ProtocolConfig::basic();
    let est = estimate_survival(&cfg, 0.0, &[1, 10, 100], 1_000, 53).unwrap();
    assert!(est.iter().all(|e| e.terminal.contains(1.0 - cfg.significance)));
    cfg.significance = 0.05;
    let est = estimate_survival(&cfg, 0.0, &[1, 10, 100], 20_000, 54).unwrap();
    for e in &est {
        assert_within_3sd(&e.terminal, 0.95, &format!("M={}", e.modes));
        assert!((e.analytic - 0.95).abs() < 1e-9);
    }
}

#[test]
fn loud_attack_is_caught_quickly() {
    let cfg = ProtocolConfig::basic();
    let attack = UgqcmAttack::new(1.0).unwrap();
    let results = run_sessions(&cfg, &attack, 1_000, 2_000, 61).unwrap();
    assert!(results.iter().all(|r| r.aborted));
    let mut idx: Vec<u64> = results.iter().map(|r| r.abort_run_index.unwrap()).collect();
    idx.sort_unstable();
    let median = idx[idx.len() / 2];
    assert!(median < 200, "median abort index {median}");
}

/// Delivered logical bits per transmitted system, pooled over many
/// sessions on a clean channel.
fn pooled_efficiency(cfg: &ProtocolConfig, sessions: u64, bits: usize, seed: u64) -> f64 {
    let results = run_sessions(cfg, &IdentityChannel, sessions, bits, seed).unwrap();
    let delivered: u64 = results.iter().map(|r| r.message_bits_sent).sum();
    let runs: u64 = results.iter().map(|r| r.runs_executed).sum();
    assert!(results.iter().all(|r| !r.aborted));
    delivered as f64 / runs as f64
}

#[test]
fn efficiency_is_one_in_thirty_five() {
    let target = 1.0 / 35.0;
    // 20 sessions of ~10⁵ runs: the MM count has ~0.6% relative spread.
    let basic = pooled_efficiency(&ProtocolConfig::basic(), 20, 2_858, 71);
    assert!((basic / target - 1.0).abs() < 0.02, "{basic}");
    let coded = pooled_efficiency(&ProtocolConfig::coded(), 4, 2_858, 72);
    assert!((coded / target - 1.0).abs() < 0.02, "{coded}");
}

//! Closed-form security analysis of the protocol under a cloning attack.
//!
//! After N runs there are on average cN control modes and (1 − c)N message
//! modes. Eve survives with probability P = Π_{cN}(σ²) and has stolen
//! I = (1 − c)·N·I_AE(σ²) bits. Sweeping N traces the curve P(I); the attack
//! that steals the most before P drops to a cutoff is Eve's best strategy.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauss_num::{binary_information, chi2_upper_quantile, regularized_lower_gamma, Variance};
use crate::lattice::intrinsic_error;
use crate::protocol::ProtocolConfig;
use crate::rep_code::{uncorrectable_prob, RepCode};

/// Probability that an attack adding noise σ² passes the χ² test after M
/// control modes: Π_M = P(M, 𝒱_{2M,1−r} / (2(1 + σ²))), with Π₀ = 1.
pub fn survival_prob(modes: u64, sigma2: f64, r: f64) -> Result<f64> {
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(Error::domain(format!("added noise must be non-negative, got {sigma2}")));
    }
    if modes == 0 {
        return Ok(1.0);
    }
    let v = chi2_upper_quantile(2 * modes, r)?;
    regularized_lower_gamma(modes as f64, v / (2.0 * (1.0 + sigma2)))
}

/// Eve's total heterodyne noise Δ_E = Δ + 1/(4σ²) on her clone.
fn eve_noise(sigma2: f64) -> Result<Variance> {
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::domain(format!("attack noise must be positive, got {sigma2}")));
    }
    Variance::new(1.0 + 1.0 / (4.0 * sigma2))
}

/// Bits Eve learns per message mode without coding: 2[1 − H(ε(Ω, Δ_E))].
pub fn stolen_info_basic(sigma2: f64, omega: f64) -> Result<f64> {
    let p = intrinsic_error(omega, eve_noise(sigma2)?)?;
    Ok(2.0 * binary_information(p)?)
}

/// Bits Eve learns per message mode with a repetition code:
/// 2[1 − H(P_n(ε(Ω, Δ_E)))]/n.
pub fn stolen_info_coded(sigma2: f64, omega: f64, code: RepCode) -> Result<f64> {
    let p = intrinsic_error(omega, eve_noise(sigma2)?)?;
    let logical = uncorrectable_prob(code, p)?;
    Ok(2.0 * binary_information(logical)? / code.n() as f64)
}

/// I_AE for whichever protocol variant `cfg` describes.
pub fn stolen_info(cfg: &ProtocolConfig, sigma2: f64) -> Result<f64> {
    stolen_info_coded(sigma2, cfg.lattice.omega, cfg.code)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecurityScenario {
    pub cfg: ProtocolConfig,
    pub sigma2: f64,
}

impl SecurityScenario {
    pub fn new(cfg: ProtocolConfig, sigma2: f64) -> Result<Self> {
        cfg.validate()?;
        eve_noise(sigma2)?;
        Ok(SecurityScenario { cfg, sigma2 })
    }

    /// Expected control modes after `runs` runs, rounded to a whole test count.
    pub fn control_modes(&self, runs: u64) -> u64 {
        (self.cfg.control_prob * runs as f64).round() as u64
    }

    pub fn survival_after(&self, runs: u64) -> Result<f64> {
        survival_prob(self.control_modes(runs), self.sigma2, self.cfg.significance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    /// Protocol runs N (transmitted systems).
    pub runs: u64,
    /// Stolen bits I = (1 − c)·N·I_AE.
    pub stolen_bits: f64,
    /// Survival probability P = Π_{cN}.
    pub survival: f64,
}

pub fn survival_vs_stolen_curve(scenario: &SecurityScenario, runs_grid: &[u64]) -> Result<Vec<CurvePoint>> {
    if runs_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::domain("runs grid must be ascending"));
    }
    let per_message_mode = stolen_info(&scenario.cfg, scenario.sigma2)?;
    let message_fraction = 1.0 - scenario.cfg.control_prob;
    runs_grid
        .iter()
        .map(|&runs| {
            Ok(CurvePoint {
                runs,
                stolen_bits: message_fraction * runs as f64 * per_message_mode,
                survival: scenario.survival_after(runs)?,
            })
        })
        .collect()
}

/// Where a curve crosses the survival cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detection {
    pub sigma2: f64,
    /// Smallest N with P ≤ cutoff, or the protocol's maximum length when the
    /// attack is never detected.
    pub runs: u64,
    pub survival: f64,
    /// Bits Eve holds at that point.
    pub stolen_bits: f64,
    /// Logical bits Alice has delivered to Bob at that point.
    pub alice_bits: f64,
    pub detected: bool,
}

pub fn detection_point(scenario: &SecurityScenario, cutoff: f64) -> Result<Detection> {
    check_cutoff(cutoff)?;
    let cfg = &scenario.cfg;
    let limit = max_qdc_systems(cfg).floor() as u64;
    let per_message_mode = stolen_info(cfg, scenario.sigma2)?;
    let at = |runs: u64, survival: f64, detected: bool| Detection {
        sigma2: scenario.sigma2,
        runs,
        survival,
        stolen_bits: (1.0 - cfg.control_prob) * runs as f64 * per_message_mode,
        alice_bits: cfg.efficiency() * runs as f64,
        detected,
    };

    let p_limit = scenario.survival_after(limit)?;
    if p_limit > cutoff {
        return Ok(at(limit, p_limit, false));
    }
    // P(0) = 1 > cutoff ≥ P(limit); P is non-increasing in N.
    let (mut lo, mut hi, mut p_hi) = (0u64, limit, p_limit);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let p = scenario.survival_after(mid)?;
        if p <= cutoff {
            hi = mid;
            p_hi = p;
        } else {
            lo = mid;
        }
    }
    Ok(at(hi, p_hi, true))
}

fn check_cutoff(cutoff: f64) -> Result<()> {
    if cutoff > 0.0 && cutoff < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "survival cutoff must lie in (0, 1), got {cutoff}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BestAttack {
    pub sigma2: f64,
    pub stolen_bits: f64,
    pub detection: Detection,
}

/// 60 log-spaced noise values over [10⁻³, 10].
pub fn default_sigma2_grid() -> Vec<f64> {
    log_grid(1e-3, 10.0, 60)
}

pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2 && lo > 0.0 && hi > lo);
    let (a, b) = (lo.ln(), hi.ln());
    let mut grid: Vec<f64> = (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect();
    grid[0] = lo;
    grid[points - 1] = hi;
    grid
}

/// The cloner noise that maximizes the bits stolen before survival drops to
/// `cutoff`: grid search, then golden-section refinement in log σ² around
/// the best grid point.
pub fn best_attack(cfg: &ProtocolConfig, cutoff: f64, sigma2_grid: &[f64]) -> Result<BestAttack> {
    check_cutoff(cutoff)?;
    cfg.validate()?;
    let mut grid = sigma2_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    match (grid.first(), grid.last()) {
        (Some(&lo), Some(&hi)) if lo > 0.0 && lo <= 1e-3 && hi >= 10.0 => {}
        _ => {
            return Err(Error::domain(
                "noise grid must be positive and span at least [1e-3, 10]",
            ))
        }
    }

    let evaluate =
        |sigma2: f64| -> Result<Detection> { detection_point(&SecurityScenario::new(*cfg, sigma2)?, cutoff) };
    let detections = grid.iter().map(|&s| evaluate(s)).collect::<Result<Vec<_>>>()?;
    let (best_idx, _) = detections
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.stolen_bits.total_cmp(&b.1.stolen_bits))
        .expect("non-empty grid");
    let mut best = detections[best_idx];

    let (mut a, mut b) = (
        grid[best_idx.saturating_sub(1)].ln(),
        grid[(best_idx + 1).min(grid.len() - 1)].ln(),
    );
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut d1 = evaluate(x1.exp())?;
    let mut d2 = evaluate(x2.exp())?;
    for _ in 0..40 {
        if d1.stolen_bits >= d2.stolen_bits {
            b = x2;
            x2 = x1;
            d2 = d1;
            x1 = b - INV_PHI * (b - a);
            d1 = evaluate(x1.exp())?;
        } else {
            a = x1;
            x1 = x2;
            d1 = d2;
            x2 = a + INV_PHI * (b - a);
            d2 = evaluate(x2.exp())?;
        }
    }
    for d in [d1, d2] {
        if d.stolen_bits > best.stolen_bits {
            best = d;
        }
    }
    Ok(BestAttack {
        sigma2: best.sigma2,
        stolen_bits: best.stolen_bits,
        detection: best,
    })
}

/// Upper bound 4(1 − c)/(n·c·r) on the message bits one session can carry:
/// roughly 1/r tests can be passed before a false alarm.
pub fn max_qdc_length(cfg: &ProtocolConfig) -> f64 {
    4.0 * (1.0 - cfg.control_prob) / (cfg.code.n() as f64 * cfg.control_prob * cfg.significance)
}

/// [`max_qdc_length`] expressed in transmitted systems.
pub fn max_qdc_systems(cfg: &ProtocolConfig) -> f64 {
    max_qdc_length(cfg) / cfg.efficiency()
}

/// Ascending runs grid for plotting a P(I) curve: 0, then `points`
/// log-spaced values up to where survival falls below `floor` (or the
/// maximum session length).
pub fn curve_runs_grid(scenario: &SecurityScenario, points: usize, floor: f64) -> Result<Vec<u64>> {
    let end = detection_point(scenario, floor)?.runs.max(2);
    let mut grid = vec![0u64];
    grid.extend(
        log_grid(1.0, end as f64, points.max(2))
            .into_iter()
            .map(|x| x.round() as u64),
    );
    grid.dedup();
    Ok(grid)
}

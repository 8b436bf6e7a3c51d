//! Monte Carlo orchestration: batched trials on derived random streams,
//! binomial estimates with Wilson intervals, and the datasets behind the
//! security and repetition-code figures.
//!
//! Trial `i` of grid point `j` always draws from stream
//! `(master_seed, j·2⁴⁰ + i)`, and reductions are ordered, so results do not
//! depend on how many threads run the trials.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::adversary::{AttackModel, Eavesdropper, IdentityChannel, UgqcmAttack};
use crate::analytics::{
    curve_runs_grid, detection_point, survival_prob, survival_vs_stolen_curve, CurvePoint, Detection, SecurityScenario,
};
use crate::error::{Error, Result};
use crate::gauss_num::RngStream;
use crate::lattice::{decode_pair, BitPair};
use crate::protocol::{
    alice_prepare_cm, alice_prepare_mm, bob_measure, random_message, ControlTest, ProtocolConfig, Session,
    SessionResult, TranscriptEntry,
};
use crate::rep_code::{majority_decode, uncorrectable_prob, RepCode};

const Z_95: f64 = 1.959_963_984_540_054;
const POINT_STRIDE: u64 = 1 << 40;
/// Message plaintexts come from their own stream family.
const MESSAGE_STREAMS: u64 = 1 << 63;

pub const MIN_TRIALS: u64 = 1_000;

/// Stream for trial `trial` of grid point `point`.
pub fn trial_stream(master_seed: u64, point: u64, trial: u64) -> RngStream {
    RngStream::new(master_seed, point * POINT_STRIDE + trial)
}

/// A binomial frequency with its 95% Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateWithCI {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub successes: u64,
    pub trials: u64,
}

impl EstimateWithCI {
    pub fn wilson(successes: u64, trials: u64) -> Self {
        assert!(trials > 0 && successes <= trials);
        let n = trials as f64;
        let p = successes as f64 / n;
        let z2 = Z_95 * Z_95;
        let denom = 1.0 + z2 / n;
        let center = (p + z2 / (2.0 * n)) / denom;
        let half = Z_95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
        EstimateWithCI {
            estimate: p,
            ci_low: (center - half).clamp(0.0, p),
            ci_high: (center + half).clamp(p, 1.0),
            successes,
            trials,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.ci_low <= x && x <= self.ci_high
    }

    /// |estimate − expected| in units of the binomial standard deviation at
    /// `expected`.
    pub fn z_score(&self, expected: f64) -> f64 {
        let sd = (expected * (1.0 - expected) / self.trials as f64).sqrt();
        if sd == 0.0 {
            if self.estimate == expected {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.estimate - expected).abs() / sd
        }
    }
}

/// Map `f` over `range`, in parallel when the `parallel` feature is on,
/// returning results in index order.
fn ordered_map<T: Send>(range: Range<u64>, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        range.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        range.map(f).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BerEstimate {
    /// Per physical bit.
    pub bob: EstimateWithCI,
    pub eve: Option<EstimateWithCI>,
    /// Per logical bit after majority voting (equal to the physical
    /// estimate for the basic protocol).
    pub bob_logical: EstimateWithCI,
    pub eve_logical: Option<EstimateWithCI>,
}

#[derive(Debug, Default, Clone, Copy)]
struct BerCounts {
    bits: u64,
    bob: u64,
    eve: u64,
    logical_bits: u64,
    bob_logical: u64,
    eve_logical: u64,
}

/// Bit error rates over `trials` logical bit pairs sent in message mode
/// only. Each trial sends one codeword pair through n message modes.
pub fn estimate_ber(
    cfg: &ProtocolConfig,
    attack: &dyn AttackModel,
    trials: u64,
    master_seed: u64,
) -> Result<BerEstimate> {
    if trials < MIN_TRIALS {
        return Err(Error::domain(format!(
            "BER estimation needs at least {MIN_TRIALS} trials"
        )));
    }
    estimate_ber_range(cfg, attack, 0..trials, master_seed, 0)
}

/// [`estimate_ber`] over an explicit trial index range of grid point
/// `point`; disjoint ranges can be pooled.
pub fn estimate_ber_range(
    cfg: &ProtocolConfig,
    attack: &dyn AttackModel,
    trials: Range<u64>,
    master_seed: u64,
    point: u64,
) -> Result<BerEstimate> {
    cfg.validate()?;
    if trials.is_empty() {
        return Err(Error::domain("empty trial range"));
    }
    let n = cfg.code.n() as usize;
    let omega = cfg.lattice.omega;
    let per_trial = ordered_map(trials, |i| -> Result<BerCounts> {
        let mut rng = trial_stream(master_seed, point, i);
        let sent = BitPair::new(rng.bit(), rng.bit());
        let mut words = [
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        ];
        let mut counts = BerCounts::default();
        let mut eve = Eavesdropper::new(cfg.code, omega);
        let mut eve_seen = false;
        for _ in 0..n {
            let enc = alice_prepare_mm(sent, cfg, &mut rng);
            let tap = attack.tap(enc.signal, cfg.detection_variance, &mut rng);
            let beta = bob_measure(enc.signal, tap.bob_variance.value(), &mut rng);
            let bob = decode_pair(beta, enc.mask, omega);
            words[0].push(bob.u);
            words[1].push(bob.u_prime);
            counts.bits += 2;
            counts.bob += u64::from(bob.u != sent.u) + u64::from(bob.u_prime != sent.u_prime);
            if let Some(record) = tap.eve_record {
                eve_seen = true;
                eve.observe(record);
                let got = eve.on_mask_reveal(enc.mask)?.physical;
                words[2].push(got.u);
                words[3].push(got.u_prime);
                counts.eve += u64::from(got.u != sent.u) + u64::from(got.u_prime != sent.u_prime);
            }
        }
        counts.logical_bits = 2;
        counts.bob_logical = logical_errors(&words[0], &words[1], sent, cfg.code)?;
        if eve_seen {
            counts.eve_logical = logical_errors(&words[2], &words[3], sent, cfg.code)?;
        }
        Ok(counts)
    });

    let mut total = BerCounts::default();
    let mut eve_seen = false;
    for c in per_trial {
        let c = c?;
        total.bits += c.bits;
        total.bob += c.bob;
        total.eve += c.eve;
        total.logical_bits += c.logical_bits;
        total.bob_logical += c.bob_logical;
        total.eve_logical += c.eve_logical;
    }
    if attack.added_noise() > 0.0 {
        eve_seen = true;
    }
    Ok(BerEstimate {
        bob: EstimateWithCI::wilson(total.bob, total.bits),
        eve: eve_seen.then(|| EstimateWithCI::wilson(total.eve, total.bits)),
        bob_logical: EstimateWithCI::wilson(total.bob_logical, total.logical_bits),
        eve_logical: eve_seen.then(|| EstimateWithCI::wilson(total.eve_logical, total.logical_bits)),
    })
}

fn logical_errors(word_u: &[u8], word_u_prime: &[u8], sent: BitPair, code: RepCode) -> Result<u64> {
    let u = majority_decode(word_u, code)?;
    let u_prime = majority_decode(word_u_prime, code)?;
    Ok(u64::from(u != sent.u) + u64::from(u_prime != sent.u_prime))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurvivalEstimate {
    pub modes: u64,
    /// Sessions whose single test after `modes` control modes passes.
    pub terminal: EstimateWithCI,
    /// Sessions that pass every test up to and including `modes`.
    pub sequential: EstimateWithCI,
    /// Π_M from the closed form.
    pub analytic: f64,
}

/// Empirical survival of an attack adding noise `sigma2` (0 = no attack),
/// simulated over control modes only.
pub fn estimate_survival(
    cfg: &ProtocolConfig,
    sigma2: f64,
    modes_grid: &[u64],
    trials: u64,
    master_seed: u64,
) -> Result<Vec<SurvivalEstimate>> {
    if trials < MIN_TRIALS {
        return Err(Error::domain(format!(
            "survival estimation needs at least {MIN_TRIALS} trials"
        )));
    }
    let test = Arc::new(ControlTest::new(cfg.significance)?);
    estimate_survival_with(cfg, sigma2, modes_grid, trials, master_seed, 0, &test)
}

fn estimate_survival_with(
    cfg: &ProtocolConfig,
    sigma2: f64,
    modes_grid: &[u64],
    trials: u64,
    master_seed: u64,
    point: u64,
    test: &ControlTest,
) -> Result<Vec<SurvivalEstimate>> {
    cfg.validate()?;
    if modes_grid.is_empty() || modes_grid[0] == 0 || modes_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain(
            "modes grid must be strictly ascending and start at 1 or more",
        ));
    }
    let attack = channel_for(sigma2)?;
    let max_modes = *modes_grid.last().expect("non-empty");
    // Fill the threshold table before fanning out.
    test.threshold(max_modes)?;

    let per_trial = ordered_map(0..trials, |i| -> Result<Vec<(bool, bool)>> {
        let mut rng = trial_stream(master_seed, point, i);
        let mut statistic = 0.0;
        let mut alive = true;
        let mut out = Vec::with_capacity(modes_grid.len());
        let mut next = modes_grid.iter().peekable();
        for m in 1..=max_modes {
            let signal = alice_prepare_cm(cfg, &mut rng);
            let tap = attack.tap(signal, cfg.detection_variance, &mut rng);
            let beta = bob_measure(signal, tap.bob_variance.value(), &mut rng);
            statistic += (beta - signal).norm_sqr();
            let pass = statistic < test.threshold(m)?;
            alive &= pass;
            if next.peek() == Some(&&m) {
                next.next();
                out.push((pass, alive));
            }
        }
        Ok(out)
    });

    let mut terminal = vec![0u64; modes_grid.len()];
    let mut sequential = vec![0u64; modes_grid.len()];
    for outcome in per_trial {
        for (k, (pass, alive)) in outcome?.into_iter().enumerate() {
            terminal[k] += u64::from(pass);
            sequential[k] += u64::from(alive);
        }
    }
    modes_grid
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            Ok(SurvivalEstimate {
                modes: m,
                terminal: EstimateWithCI::wilson(terminal[k], trials),
                sequential: EstimateWithCI::wilson(sequential[k], trials),
                analytic: survival_prob(m, sigma2, cfg.significance)?,
            })
        })
        .collect()
}

/// The identity channel for σ² = 0, a cloning attack otherwise.
pub fn channel_for(sigma2: f64) -> Result<Box<dyn AttackModel>> {
    if sigma2 == 0.0 {
        Ok(Box::new(IdentityChannel))
    } else {
        Ok(Box::new(UgqcmAttack::new(sigma2)?))
    }
}

/// Run `sessions` full protocol sessions, each with a fresh random
/// plaintext of `message_bits` bits, sharing one threshold table.
pub fn run_sessions(
    cfg: &ProtocolConfig,
    attack: &dyn AttackModel,
    sessions: u64,
    message_bits: usize,
    master_seed: u64,
) -> Result<Vec<SessionResult>> {
    run_sessions_at(cfg, attack, sessions, message_bits, master_seed, 0)
}

/// [`run_sessions`] on the streams of grid point `point`.
pub fn run_sessions_at(
    cfg: &ProtocolConfig,
    attack: &dyn AttackModel,
    sessions: u64,
    message_bits: usize,
    master_seed: u64,
    point: u64,
) -> Result<Vec<SessionResult>> {
    let test = Arc::new(ControlTest::new(cfg.significance)?);
    let session = Session::with_test(*cfg, attack, test)?;
    ordered_map(0..sessions, |i| {
        let (message, rng) = session_inputs(message_bits, master_seed, point, i);
        session.run(&message, rng)
    })
    .into_iter()
    .collect()
}

/// Replay session `index` of [`run_sessions_at`], reporting every run.
pub fn trace_session(
    cfg: &ProtocolConfig,
    attack: &dyn AttackModel,
    message_bits: usize,
    master_seed: u64,
    point: u64,
    index: u64,
    trace: impl FnMut(TranscriptEntry),
) -> Result<SessionResult> {
    let session = Session::new(*cfg, attack)?;
    let (message, rng) = session_inputs(message_bits, master_seed, point, index);
    session.run_traced(&message, rng, trace)
}

fn session_inputs(message_bits: usize, master_seed: u64, point: u64, index: u64) -> (Vec<u8>, RngStream) {
    let stream = point * POINT_STRIDE + index;
    let message = random_message(message_bits, &mut RngStream::new(master_seed, MESSAGE_STREAMS | stream));
    (message, RngStream::new(master_seed, stream))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Output {
    Ber,
    Survival,
    Curves,
}

/// Configurations × attack noises, each evaluated with `trials` trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentPlan {
    pub configs: Vec<ProtocolConfig>,
    /// σ² = 0 runs the identity channel.
    pub sigma2: Vec<f64>,
    pub trials: u64,
    pub master_seed: u64,
    pub outputs: Vec<Output>,
    /// Control-mode counts at which survival is estimated.
    pub survival_modes: Vec<u64>,
    pub cutoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointReport {
    pub config_index: usize,
    pub sigma2: f64,
    pub channel: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ber: Option<BerEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub survival: Option<Vec<SurvivalEstimate>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection: Option<Detection>,
}

pub fn run_plan(plan: &ExperimentPlan) -> Result<Vec<PointReport>> {
    if plan.configs.is_empty() || plan.sigma2.is_empty() {
        return Err(Error::domain("experiment grid is empty"));
    }
    if plan.trials == 0 {
        return Err(Error::domain("experiment needs at least one trial"));
    }
    let mut reports = Vec::new();
    let mut point = 0u64;
    for (ci, cfg) in plan.configs.iter().enumerate() {
        let test = ControlTest::new(cfg.significance)?;
        for &sigma2 in &plan.sigma2 {
            let attack = channel_for(sigma2)?;
            let wants = |o: Output| plan.outputs.contains(&o);
            let ber = if wants(Output::Ber) {
                Some(estimate_ber_range(
                    cfg,
                    attack.as_ref(),
                    0..plan.trials,
                    plan.master_seed,
                    point,
                )?)
            } else {
                None
            };
            let survival = if wants(Output::Survival) {
                Some(estimate_survival_with(
                    cfg,
                    sigma2,
                    &plan.survival_modes,
                    plan.trials,
                    plan.master_seed,
                    point + 1,
                    &test,
                )?)
            } else {
                None
            };
            let detection = if wants(Output::Curves) && sigma2 > 0.0 {
                Some(detection_point(&SecurityScenario::new(*cfg, sigma2)?, plan.cutoff)?)
            } else {
                None
            };
            reports.push(PointReport {
                config_index: ci,
                sigma2,
                channel: attack.label(),
                ber,
                survival,
                detection,
            });
            point += 2;
        }
    }
    Ok(reports)
}

/// Attack noises plotted in the security-curve datasets.
pub const FIGURE_SIGMA2: [f64; 5] = [0.01, 0.05, 0.1, 0.3, 1.0];
pub const FIGURE_CODE_LENGTHS: [u32; 4] = [7, 15, 35, 103];
pub const FULL_PRECISION: usize = 17;

/// `x` with `digits` significant digits in scientific notation.
pub fn fmt_float(x: f64, digits: usize) -> String {
    format!("{:.*e}", digits.max(1) - 1, x)
}

pub fn write_curve_csv<W: Write>(mut w: W, curves: &[(f64, Vec<CurvePoint>)], digits: usize) -> io::Result<()> {
    writeln!(w, "sigma2,N,I_bits,P")?;
    for (sigma2, points) in curves {
        for pt in points {
            writeln!(
                w,
                "{},{},{},{}",
                fmt_float(*sigma2, digits),
                pt.runs,
                fmt_float(pt.stolen_bits, digits),
                fmt_float(pt.survival, digits)
            )?;
        }
    }
    Ok(())
}

pub fn write_pn_csv<W: Write>(mut w: W, rows: &[(u32, f64, f64)], digits: usize) -> io::Result<()> {
    writeln!(w, "n,p,Pn")?;
    for (n, p, pn) in rows {
        writeln!(w, "{n},{},{}", fmt_float(*p, digits), fmt_float(*pn, digits))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BerRow {
    pub channel: &'static str,
    pub sigma2: f64,
    pub estimate: BerEstimate,
}

pub fn write_ber_csv<W: Write>(mut w: W, rows: &[BerRow], digits: usize) -> io::Result<()> {
    writeln!(
        w,
        "channel,sigma2,bob_ber,bob_ci_lo,bob_ci_hi,eve_ber,eve_ci_lo,eve_ci_hi,trials"
    )?;
    for row in rows {
        let bob = row.estimate.bob;
        let eve = match row.estimate.eve {
            Some(e) => format!(
                "{},{},{}",
                fmt_float(e.estimate, digits),
                fmt_float(e.ci_low, digits),
                fmt_float(e.ci_high, digits)
            ),
            None => ",,".to_string(),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            row.channel,
            fmt_float(row.sigma2, digits),
            fmt_float(bob.estimate, digits),
            fmt_float(bob.ci_low, digits),
            fmt_float(bob.ci_high, digits),
            eve,
            bob.trials
        )?;
    }
    Ok(())
}

/// Security curves P(I) for each attack noise in `sigma2`.
pub fn security_curves(cfg: &ProtocolConfig, sigma2: &[f64], points: usize) -> Result<Vec<(f64, Vec<CurvePoint>)>> {
    sigma2
        .iter()
        .map(|&s| {
            let sc = SecurityScenario::new(*cfg, s)?;
            let grid = curve_runs_grid(&sc, points, 1e-4)?;
            Ok((s, survival_vs_stolen_curve(&sc, &grid)?))
        })
        .collect()
}

/// P_n(p) on p = 0, 0.005, …, 1 for each code length.
pub fn pn_table(lengths: &[u32]) -> Result<Vec<(u32, f64, f64)>> {
    let mut rows = Vec::with_capacity(lengths.len() * 201);
    for &n in lengths {
        let code = RepCode::new(n)?;
        for k in 0..=200u32 {
            let p = k as f64 * 0.005;
            rows.push((n, p, uncorrectable_prob(code, p)?));
        }
    }
    Ok(rows)
}

/// Write `fig4a.csv` (basic protocol), `fig4b.csv` (n = 35 repetition code)
/// and `fig5.csv` (P_n sweep) into `out_dir`.
pub fn reproduce_figures(out_dir: &Path, digits: usize) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (name, cfg) in [
        ("fig4a.csv", ProtocolConfig::basic()),
        ("fig4b.csv", ProtocolConfig::coded()),
    ] {
        let curves = security_curves(&cfg, &FIGURE_SIGMA2, 200)?;
        let path = out_dir.join(name);
        write_file(&path, |w| write_curve_csv(w, &curves, digits))?;
        written.push(path);
    }
    let rows = pn_table(&FIGURE_CODE_LENGTHS)?;
    let path = out_dir.join("fig5.csv");
    write_file(&path, |w| write_pn_csv(w, &rows, digits))?;
    written.push(path);
    Ok(written)
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_interval_brackets_estimate() {
        for (k, n) in [(0, 10), (10, 10), (3, 1000), (500, 1000)] {
            let e = EstimateWithCI::wilson(k, n);
            assert!(e.ci_low <= e.estimate && e.estimate <= e.ci_high);
            assert!(e.ci_low >= 0.0 && e.ci_high <= 1.0);
        }
        // Textbook value: 50/100 → [0.4038, 0.5962].
        let e = EstimateWithCI::wilson(50, 100);
        assert!((e.ci_low - 0.4038).abs() < 1e-4 && (e.ci_high - 0.5962).abs() < 1e-4);
    }

    #[test]
    fn trial_minimums() {
        let cfg = ProtocolConfig::basic();
        assert!(estimate_ber(&cfg, &IdentityChannel, 10, 0).is_err());
        assert!(estimate_survival(&cfg, 0.0, &[1], 10, 0).is_err());
        assert!(estimate_survival(&cfg, 0.0, &[5, 2], 1000, 0).is_err());
    }

    #[test]
    fn float_format() {
        assert_eq!(fmt_float(0.5, 17), "5.0000000000000000e-1");
        assert_eq!(fmt_float(0.028, 3), "2.80e-2");
        let x = 0.1 + 0.2;
        assert_eq!(fmt_float(x, FULL_PRECISION).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn pn_table_shape() {
        let rows = pn_table(&[7, 35]).unwrap();
        assert_eq!(rows.len(), 402);
        let half = rows.iter().find(|r| r.0 == 35 && (r.1 - 0.5).abs() < 1e-12).unwrap();
        assert!((half.2 - 0.5).abs() < 1e-12);
    }
}

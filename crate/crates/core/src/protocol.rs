//! Two-party protocol engine.
//!
//! Every run Alice flips a biased coin between message mode (MM) and control
//! mode (CM) and sends a coherent state. Bob heterodynes it and acknowledges;
//! only then does Alice reveal either the mask (MM) or the whole signal
//! amplitude (CM). In CM Bob accumulates the squared residuals τ = β − ᾱ and
//! aborts the session as soon as the χ² test rejects the noiseless hypothesis.

use std::collections::VecDeque;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::adversary::{AttackModel, Eavesdropper};
use crate::error::{Error, Result};
use crate::gauss_num::{chi2_upper_quantile_from, sample_gaussian, RngStream, Variance};
use crate::lattice::{decode_pair, encode_pair, Amplitude, BitPair, Encoded, LatticeConfig};
use crate::rep_code::{majority_decode, RepCode};

/// Significance level used by both presets.
pub const DEFAULT_SIGNIFICANCE: f64 = 5e-7;
pub const DEFAULT_MAX_RUNS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub lattice: LatticeConfig,
    /// Probability c that a run is a control mode.
    pub control_prob: f64,
    /// Probability r of rejecting the noiseless hypothesis when it holds.
    pub significance: f64,
    /// Repetition code; length 1 is the basic protocol.
    pub code: RepCode,
    pub detection_variance: Variance,
    /// Tolerated added noise σ̃². Only zero tolerance is implemented.
    pub noise_threshold: f64,
    pub max_runs: u64,
}

impl ProtocolConfig {
    /// Ω = 2.57, c = 69/70, r = 5×10⁻⁷, no coding.
    pub fn basic() -> Self {
        ProtocolConfig {
            lattice: LatticeConfig::with_omega(2.57).expect("valid preset"),
            control_prob: 69.0 / 70.0,
            significance: DEFAULT_SIGNIFICANCE,
            code: RepCode::IDENTITY,
            detection_variance: Variance::HETERODYNE,
            noise_threshold: 0.0,
            max_runs: DEFAULT_MAX_RUNS,
        }
    }

    /// Ω = 1, c = 1/2, r = 5×10⁻⁷, repetition code of length 35.
    pub fn coded() -> Self {
        ProtocolConfig {
            lattice: LatticeConfig::with_omega(1.0).expect("valid preset"),
            control_prob: 0.5,
            code: RepCode::new(35).expect("odd length"),
            ..Self::basic()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lattice.validate()?;
        if !(self.control_prob > 0.0 && self.control_prob < 1.0) {
            return Err(Error::domain(format!(
                "control-mode probability must lie in (0, 1), got {}",
                self.control_prob
            )));
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(Error::domain(format!(
                "significance must lie in (0, 1), got {}",
                self.significance
            )));
        }
        if self.noise_threshold != 0.0 {
            return Err(Error::domain(
                "only the zero-tolerance test (noise threshold 0) is supported",
            ));
        }
        if self.max_runs == 0 {
            return Err(Error::domain("max_runs must be positive"));
        }
        Ok(())
    }

    /// Delivered logical bits per transmitted system, 2(1 − c)/n.
    pub fn efficiency(&self) -> f64 {
        2.0 * (1.0 - self.control_prob) / self.code.n() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "MM")]
    Message,
    #[serde(rename = "CM")]
    Control,
}

pub fn choose_mode(cfg: &ProtocolConfig, rng: &mut RngStream) -> Mode {
    if rng.uniform() < cfg.control_prob {
        Mode::Control
    } else {
        Mode::Message
    }
}

pub fn alice_prepare_mm(bits: BitPair, cfg: &ProtocolConfig, rng: &mut RngStream) -> Encoded {
    encode_pair(bits, &cfg.lattice, rng)
}

pub fn alice_prepare_cm(cfg: &ProtocolConfig, rng: &mut RngStream) -> Amplitude {
    let v = cfg.lattice.modulation_variance;
    Amplitude::new(sample_gaussian(0.0, v, rng), sample_gaussian(0.0, v, rng))
}

/// Heterodyne outcome for a mode centered at `received_mean` whose
/// quadratures carry total variance `received_variance`.
pub fn bob_measure(received_mean: Amplitude, received_variance: f64, rng: &mut RngStream) -> Amplitude {
    Amplitude::new(
        sample_gaussian(received_mean.q, received_variance, rng),
        sample_gaussian(received_mean.p, received_variance, rng),
    )
}

/// Running χ² statistic: M control modes and v = Σ of their 2M squared
/// residual quadratures.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlState {
    pub modes: u64,
    pub statistic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Continue,
    Abort,
}

/// The acceptance thresholds 𝒱_{2M,1−r} of the control test, computed
/// lazily in order of M and shared between sessions.
#[derive(Debug)]
pub struct ControlTest {
    significance: f64,
    thresholds: RwLock<Vec<f64>>,
}

impl ControlTest {
    pub fn new(significance: f64) -> Result<Self> {
        if !(significance > 0.0 && significance < 1.0) {
            return Err(Error::domain(format!(
                "significance must lie in (0, 1), got {significance}"
            )));
        }
        Ok(ControlTest {
            significance,
            thresholds: RwLock::new(Vec::new()),
        })
    }

    pub fn significance(&self) -> f64 {
        self.significance
    }

    /// 𝒱_{2M,1−r} for `modes` = M ≥ 1.
    pub fn threshold(&self, modes: u64) -> Result<f64> {
        assert!(modes >= 1, "threshold needs at least one control mode");
        let idx = (modes - 1) as usize;
        if let Some(&v) = self.thresholds.read().expect("threshold lock").get(idx) {
            return Ok(v);
        }
        let mut table = self.thresholds.write().expect("threshold lock");
        // Entry M is always computed from entry M − 1, so the table contents
        // do not depend on which session extends it first.
        let target = (idx + 1).max(table.len() + 256);
        while table.len() < target {
            let m = table.len() as u64 + 1;
            let guess = table.last().map(|v| v + 2.0);
            let v = chi2_upper_quantile_from(2 * m, self.significance, guess)?;
            table.push(v);
        }
        Ok(table[idx])
    }
}

/// Fold one control-mode residual into the statistic and test
/// v < 𝒱_{2M,1−r}.
pub fn bob_control_update(state: ControlState, tau: Amplitude, test: &ControlTest) -> Result<(ControlState, Verdict)> {
    let next = ControlState {
        modes: state.modes + 1,
        statistic: state.statistic + tau.norm_sqr(),
    };
    let verdict = if next.statistic < test.threshold(next.modes)? {
        Verdict::Continue
    } else {
        Verdict::Abort
    };
    Ok((next, verdict))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "amplitude")]
pub enum ClassicalMessage {
    DetectionAck,
    MaskReveal(Amplitude),
    SignalReveal(Amplitude),
    Abort(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Party {
    Alice,
    Bob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub from: Party,
    pub message: ClassicalMessage,
}

/// A prepared signal, with the physical bits it carries in message mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    pub mode: Mode,
    pub signal: Amplitude,
    pub bits: Option<BitPair>,
}

#[derive(Debug, Clone, Copy)]
enum Withheld {
    Mask(Amplitude),
    Signal(Amplitude),
}

/// Alice's state machine: a queue of physical bit pairs and the value she
/// withholds until Bob confirms detection.
#[derive(Debug, Clone)]
pub struct Alice {
    cfg: ProtocolConfig,
    queue: VecDeque<BitPair>,
    withheld: Option<Withheld>,
}

impl Alice {
    /// Each logical pair is repeated n times, one physical pair per MM.
    pub fn new(cfg: ProtocolConfig, logical: &[BitPair]) -> Self {
        let n = cfg.code.n() as usize;
        let queue = logical.iter().flat_map(|&pair| std::iter::repeat_n(pair, n)).collect();
        Alice {
            cfg,
            queue,
            withheld: None,
        }
    }

    pub fn has_message(&self) -> bool {
        !self.queue.is_empty()
    }

    pub fn send(&mut self, mode: Mode, rng: &mut RngStream) -> Result<Transmission> {
        if self.withheld.is_some() {
            return Err(Error::ProtocolOrder("previous run was never acknowledged"));
        }
        match mode {
            Mode::Message => {
                let bits = self
                    .queue
                    .pop_front()
                    .ok_or(Error::ProtocolOrder("message mode requested with no message left"))?;
                let enc = alice_prepare_mm(bits, &self.cfg, rng);
                self.withheld = Some(Withheld::Mask(enc.mask));
                Ok(Transmission {
                    mode,
                    signal: enc.signal,
                    bits: Some(bits),
                })
            }
            Mode::Control => {
                let signal = alice_prepare_cm(&self.cfg, rng);
                self.withheld = Some(Withheld::Signal(signal));
                Ok(Transmission {
                    mode,
                    signal,
                    bits: None,
                })
            }
        }
    }

    /// Answer Bob's acknowledgement with the withheld reveal.
    pub fn handle(&mut self, msg: &ClassicalMessage) -> Result<ClassicalMessage> {
        match msg {
            ClassicalMessage::DetectionAck => match self.withheld.take() {
                Some(Withheld::Mask(mask)) => Ok(ClassicalMessage::MaskReveal(mask)),
                Some(Withheld::Signal(signal)) => Ok(ClassicalMessage::SignalReveal(signal)),
                None => Err(Error::ProtocolOrder("acknowledgement with nothing in flight")),
            },
            _ => Err(Error::ProtocolOrder("alice only expects detection acknowledgements")),
        }
    }
}

/// What Bob learned from one reveal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BobEvent {
    Decoded {
        physical: BitPair,
        logical: Option<BitPair>,
    },
    Control {
        state: ControlState,
        threshold: f64,
        verdict: Verdict,
    },
}

#[derive(Debug, Clone)]
pub struct Bob {
    omega: f64,
    code: RepCode,
    test: Arc<ControlTest>,
    control: ControlState,
    outcome: Option<Amplitude>,
    word_u: Vec<u8>,
    word_u_prime: Vec<u8>,
}

impl Bob {
    pub fn new(cfg: &ProtocolConfig, test: Arc<ControlTest>) -> Self {
        Bob {
            omega: cfg.lattice.omega,
            code: cfg.code,
            test,
            control: ControlState::default(),
            outcome: None,
            word_u: Vec::with_capacity(cfg.code.n() as usize),
            word_u_prime: Vec::with_capacity(cfg.code.n() as usize),
        }
    }

    pub fn control_state(&self) -> ControlState {
        self.control
    }

    pub fn detect(&mut self, received_mean: Amplitude, variance: Variance, rng: &mut RngStream) -> ClassicalMessage {
        self.outcome = Some(bob_measure(received_mean, variance.value(), rng));
        ClassicalMessage::DetectionAck
    }

    pub fn last_outcome(&self) -> Option<Amplitude> {
        self.outcome
    }

    pub fn handle(&mut self, msg: &ClassicalMessage) -> Result<BobEvent> {
        match msg {
            ClassicalMessage::MaskReveal(mask) => {
                let beta = self
                    .outcome
                    .take()
                    .ok_or(Error::ProtocolOrder("mask revealed before detection"))?;
                let physical = decode_pair(beta, *mask, self.omega);
                self.word_u.push(physical.u);
                self.word_u_prime.push(physical.u_prime);
                let logical = if self.word_u.len() == self.code.n() as usize {
                    let pair = BitPair::new(
                        majority_decode(&self.word_u, self.code)?,
                        majority_decode(&self.word_u_prime, self.code)?,
                    );
                    self.word_u.clear();
                    self.word_u_prime.clear();
                    Some(pair)
                } else {
                    None
                };
                Ok(BobEvent::Decoded { physical, logical })
            }
            ClassicalMessage::SignalReveal(signal) => {
                let beta = self
                    .outcome
                    .take()
                    .ok_or(Error::ProtocolOrder("signal revealed before detection"))?;
                let (state, verdict) = bob_control_update(self.control, beta - *signal, &self.test)?;
                self.control = state;
                Ok(BobEvent::Control {
                    state,
                    threshold: self.test.threshold(state.modes)?,
                    verdict,
                })
            }
            _ => Err(Error::ProtocolOrder("bob only expects mask or signal reveals")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSnapshot {
    pub modes: u64,
    pub statistic: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

/// One line of a session transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub run: u64,
    pub mode: Mode,
    pub signal: Amplitude,
    pub beta: Amplitude,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eve_record: Option<Amplitude>,
    pub messages: Vec<Envelope>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub control: Option<ControlSnapshot>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub runs_executed: u64,
    pub message_runs: u64,
    pub control_modes: u64,
    /// Logical message bits received by Bob (completed codeword pairs only).
    pub message_bits_sent: u64,
    pub message_bits_delivered_correctly: u64,
    /// Physical bits carried by message modes, and Bob's errors on them.
    pub physical_bits: u64,
    pub bob_physical_errors: u64,
    pub eve_physical_errors: u64,
    pub aborted: bool,
    pub abort_run_index: Option<u64>,
    pub final_statistic: f64,
    /// (Alice's logical bit, Eve's decoded logical bit) for every completed
    /// codeword Eve saw.
    pub eve_bit_record: Vec<(u8, u8)>,
}

impl SessionResult {
    /// Logical bits delivered per transmitted system.
    pub fn efficiency(&self) -> f64 {
        if self.runs_executed == 0 {
            0.0
        } else {
            self.message_bits_sent as f64 / self.runs_executed as f64
        }
    }

    pub fn bob_logical_errors(&self) -> u64 {
        self.message_bits_sent - self.message_bits_delivered_correctly
    }

    pub fn eve_logical_errors(&self) -> u64 {
        self.eve_bit_record.iter().filter(|(a, e)| a != e).count() as u64
    }
}

/// A configured protocol instance that can run any number of sessions
/// against one channel.
#[derive(Debug, Clone)]
pub struct Session<'a> {
    cfg: ProtocolConfig,
    channel: &'a dyn AttackModel,
    test: Arc<ControlTest>,
}

impl<'a> Session<'a> {
    pub fn new(cfg: ProtocolConfig, channel: &'a dyn AttackModel) -> Result<Self> {
        let test = Arc::new(ControlTest::new(cfg.significance)?);
        Self::with_test(cfg, channel, test)
    }

    /// Reuse a threshold table, typically shared by many sessions.
    pub fn with_test(cfg: ProtocolConfig, channel: &'a dyn AttackModel, test: Arc<ControlTest>) -> Result<Self> {
        cfg.validate()?;
        if test.significance() != cfg.significance {
            return Err(Error::domain(
                "control test significance differs from the configuration",
            ));
        }
        Ok(Session { cfg, channel, test })
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.cfg
    }

    pub fn run(&self, message: &[u8], rng: RngStream) -> Result<SessionResult> {
        self.run_traced(message, rng, |_| {})
    }

    pub fn run_traced(
        &self,
        message: &[u8],
        mut rng: RngStream,
        mut trace: impl FnMut(TranscriptEntry),
    ) -> Result<SessionResult> {
        let logical = pairs_from_bits(message)?;
        let cfg = &self.cfg;
        let mut alice = Alice::new(*cfg, &logical);
        let mut bob = Bob::new(cfg, Arc::clone(&self.test));
        let mut eve = Eavesdropper::new(cfg.code, cfg.lattice.omega);
        let mut res = SessionResult::default();
        let mut bob_logical_done = 0usize;
        let mut eve_logical_done = 0usize;

        for run in 0..cfg.max_runs {
            if !alice.has_message() {
                break;
            }
            let mode = choose_mode(cfg, &mut rng);
            let tx = alice.send(mode, &mut rng)?;
            let tap = self.channel.tap(tx.signal, cfg.detection_variance, &mut rng);
            if let Some(record) = tap.eve_record {
                eve.observe(record);
            }
            let ack = bob.detect(tx.signal, tap.bob_variance, &mut rng);
            let beta = bob.last_outcome().expect("just measured");
            let reveal = alice.handle(&ack)?;
            let event = bob.handle(&reveal)?;
            res.runs_executed += 1;

            let mut messages = vec![
                Envelope {
                    from: Party::Bob,
                    message: ack,
                },
                Envelope {
                    from: Party::Alice,
                    message: reveal.clone(),
                },
            ];
            let mut control = None;

            match event {
                BobEvent::Decoded {
                    physical,
                    logical: bob_pair,
                } => {
                    let truth = tx.bits.expect("message mode carries bits");
                    res.message_runs += 1;
                    res.physical_bits += 2;
                    res.bob_physical_errors += bit_errors(truth, physical);
                    if let Some(pair) = bob_pair {
                        let sent = logical[bob_logical_done];
                        bob_logical_done += 1;
                        res.message_bits_sent += 2;
                        res.message_bits_delivered_correctly += 2 - bit_errors(sent, pair);
                    }
                    if tap.eve_record.is_some() {
                        let mask = match reveal {
                            ClassicalMessage::MaskReveal(m) => m,
                            _ => unreachable!("message mode reveals the mask"),
                        };
                        let decoded = eve.on_mask_reveal(mask)?;
                        res.eve_physical_errors += bit_errors(truth, decoded.physical);
                        if let Some(pair) = decoded.logical {
                            let sent = logical[eve_logical_done];
                            eve_logical_done += 1;
                            res.eve_bit_record.push((sent.u, pair.u));
                            res.eve_bit_record.push((sent.u_prime, pair.u_prime));
                        }
                    }
                }
                BobEvent::Control {
                    state,
                    threshold,
                    verdict,
                } => {
                    eve.forget();
                    res.control_modes += 1;
                    res.final_statistic = state.statistic;
                    control = Some(ControlSnapshot {
                        modes: state.modes,
                        statistic: state.statistic,
                        threshold,
                        verdict,
                    });
                    if verdict == Verdict::Abort {
                        res.aborted = true;
                        res.abort_run_index = Some(run);
                        messages.push(Envelope {
                            from: Party::Bob,
                            message: ClassicalMessage::Abort(format!(
                                "chi-square statistic {:.6} over {} control modes exceeds {:.6}",
                                state.statistic, state.modes, threshold
                            )),
                        });
                    }
                }
            }

            trace(TranscriptEntry {
                run,
                mode,
                signal: tx.signal,
                beta,
                eve_record: tap.eve_record,
                messages,
                control,
            });
            if res.aborted {
                break;
            }
        }
        Ok(res)
    }
}

fn bit_errors(a: BitPair, b: BitPair) -> u64 {
    u64::from(a.u != b.u) + u64::from(a.u_prime != b.u_prime)
}

/// Group a plaintext bit string into (u, u′) pairs.
pub fn pairs_from_bits(message: &[u8]) -> Result<Vec<BitPair>> {
    if !message.len().is_multiple_of(2) {
        return Err(Error::domain(format!(
            "message must have an even number of bits, got {}",
            message.len()
        )));
    }
    if let Some(b) = message.iter().find(|&&b| b > 1) {
        return Err(Error::domain(format!("message bits must be 0 or 1, found {b}")));
    }
    Ok(message.chunks_exact(2).map(|c| BitPair::new(c[0], c[1])).collect())
}

/// Uniformly random plaintext of `bits` bits.
pub fn random_message(bits: usize, rng: &mut RngStream) -> Vec<u8> {
    (0..bits).map(|_| rng.bit()).collect()
}

/// Run one session on stream `(master_seed, 0)`.
pub fn run_session(
    cfg: &ProtocolConfig,
    attack: &dyn AttackModel,
    message: &[u8],
    master_seed: u64,
) -> Result<SessionResult> {
    Session::new(*cfg, attack)?.run(message, RngStream::new(master_seed, 0))
}

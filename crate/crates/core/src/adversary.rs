//! Channel models between Alice and Bob.
//!
//! Attacks are modelled through the Gaussian statistics of the outputs they
//! produce: each clone of the signal is the signal coherent state displaced by
//! Gaussian noise, so a heterodyne measurement on clone K returns the signal
//! amplitude plus N(0, Δ + σ_K²) per quadrature.

use std::fmt::Debug;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauss_num::{sample_gaussian, RngStream, Variance};
use crate::lattice::{decode_pair, Amplitude, BitPair};
use crate::rep_code::{majority_decode, RepCode};

/// What a single transmitted signal looks like after the channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    /// Total per-quadrature variance of Bob's heterodyne outcome.
    pub bob_variance: Variance,
    /// Eve's heterodyne outcome on her clone, if anyone is listening.
    pub eve_record: Option<Amplitude>,
}

pub trait AttackModel: Debug + Send + Sync {
    fn tap(&self, signal: Amplitude, detection: Variance, rng: &mut RngStream) -> Tap;

    /// Noise σ² added to Bob's mode.
    fn added_noise(&self) -> f64;

    fn label(&self) -> &'static str;
}

/// A noiseless channel: Bob only sees heterodyne shot noise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IdentityChannel;

pub fn identity_channel(_signal: Amplitude, detection: Variance) -> Tap {
    Tap {
        bob_variance: detection,
        eve_record: None,
    }
}

impl AttackModel for IdentityChannel {
    fn tap(&self, signal: Amplitude, detection: Variance, _rng: &mut RngStream) -> Tap {
        identity_channel(signal, detection)
    }

    fn added_noise(&self) -> f64 {
        0.0
    }

    fn label(&self) -> &'static str {
        "identity"
    }
}

/// Individual attack with a universal Gaussian quantum cloning machine.
///
/// The two clones carry added noises σ_B² = σ² and σ_E² = 1/(4σ²); Eve
/// heterodynes her clone on every run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UgqcmAttack {
    sigma2: f64,
    sigma2_eve: f64,
}

impl UgqcmAttack {
    pub fn new(sigma2: f64) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::domain(format!("cloner noise must be positive, got {sigma2}")));
        }
        Ok(UgqcmAttack {
            sigma2,
            sigma2_eve: 1.0 / (4.0 * sigma2),
        })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn sigma2_eve(&self) -> f64 {
        self.sigma2_eve
    }

    /// Per-quadrature variance of Eve's heterodyne outcome around the signal.
    pub fn eve_variance(&self, detection: Variance) -> Variance {
        Variance::new(detection.value() + self.sigma2_eve).expect("positive by construction")
    }

    pub fn bob_variance(&self, detection: Variance) -> Variance {
        Variance::new(detection.value() + self.sigma2).expect("positive by construction")
    }
}

pub fn ugqcm_tap(attack: &UgqcmAttack, signal: Amplitude, detection: Variance, rng: &mut RngStream) -> Tap {
    let eve = attack.eve_variance(detection).value();
    let record = Amplitude::new(sample_gaussian(signal.q, eve, rng), sample_gaussian(signal.p, eve, rng));
    Tap {
        bob_variance: attack.bob_variance(detection),
        eve_record: Some(record),
    }
}

impl AttackModel for UgqcmAttack {
    fn tap(&self, signal: Amplitude, detection: Variance, rng: &mut RngStream) -> Tap {
        ugqcm_tap(self, signal, detection, rng)
    }

    fn added_noise(&self) -> f64 {
        self.sigma2
    }

    fn label(&self) -> &'static str {
        "ugqcm"
    }
}

/// Eve's decoding of one message-mode run. She can only unmask once Alice has
/// announced the mask.
pub fn eve_decode_mm(eve_outcome: Amplitude, mask: Option<Amplitude>, omega: f64) -> Result<BitPair> {
    let mask = mask.ok_or(Error::ProtocolOrder("eve cannot decode before the mask is revealed"))?;
    Ok(decode_pair(eve_outcome, mask, omega))
}

pub fn eve_decode_logical(bits: &[u8], code: RepCode) -> Result<u8> {
    if bits.len() != code.n() as usize {
        return Err(Error::domain(format!(
            "incomplete codeword: {} of {} physical bits",
            bits.len(),
            code.n()
        )));
    }
    majority_decode(bits, code)
}

/// Eve's side of a session: the outcome of her last measurement and the
/// physical bits of the codeword pair in progress.
#[derive(Debug, Clone)]
pub struct Eavesdropper {
    code: RepCode,
    omega: f64,
    pending: Option<Amplitude>,
    word_u: Vec<u8>,
    word_u_prime: Vec<u8>,
}

/// Result of Eve processing one mask reveal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EveDecode {
    pub physical: BitPair,
    /// Set when this run completed a codeword pair.
    pub logical: Option<BitPair>,
}

impl Eavesdropper {
    pub fn new(code: RepCode, omega: f64) -> Self {
        Eavesdropper {
            code,
            omega,
            pending: None,
            word_u: Vec::with_capacity(code.n() as usize),
            word_u_prime: Vec::with_capacity(code.n() as usize),
        }
    }

    pub fn observe(&mut self, record: Amplitude) {
        self.pending = Some(record);
    }

    /// A control-mode reveal teaches Eve nothing about the message.
    pub fn forget(&mut self) {
        self.pending = None;
    }

    pub fn on_mask_reveal(&mut self, mask: Amplitude) -> Result<EveDecode> {
        let record = self
            .pending
            .take()
            .ok_or(Error::ProtocolOrder("mask revealed for a run eve did not observe"))?;
        let physical = eve_decode_mm(record, Some(mask), self.omega)?;
        self.word_u.push(physical.u);
        self.word_u_prime.push(physical.u_prime);
        let logical = if self.word_u.len() == self.code.n() as usize {
            let pair = BitPair::new(
                eve_decode_logical(&self.word_u, self.code)?,
                eve_decode_logical(&self.word_u_prime, self.code)?,
            );
            self.word_u.clear();
            self.word_u_prime.clear();
            Some(pair)
        } else {
            None
        };
        Ok(EveDecode { physical, logical })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cloner_variances() {
        let a = UgqcmAttack::new(1.0).unwrap();
        assert_eq!(a.bob_variance(Variance::HETERODYNE).value(), 2.0);
        assert_eq!(a.eve_variance(Variance::HETERODYNE).value(), 1.25);
        let a = UgqcmAttack::new(0.05).unwrap();
        assert!((a.eve_variance(Variance::HETERODYNE).value() - 6.0).abs() < 1e-12);
        assert!((a.bob_variance(Variance::HETERODYNE).value() - 1.05).abs() < 1e-15);
        assert!(UgqcmAttack::new(0.0).is_err());
        assert!(UgqcmAttack::new(-0.3).is_err());
    }

    #[test]
    fn identity_has_no_record() {
        let tap = identity_channel(Amplitude::new(3.0, -4.0), Variance::HETERODYNE);
        assert_eq!(tap.bob_variance.value(), 1.0);
        assert!(tap.eve_record.is_none());
    }

    #[test]
    fn decoding_requires_mask() {
        let err = eve_decode_mm(Amplitude::ZERO, None, 2.57).unwrap_err();
        assert!(matches!(err, Error::ProtocolOrder(_)));
        let mut eve = Eavesdropper::new(RepCode::IDENTITY, 2.57);
        assert!(matches!(
            eve.on_mask_reveal(Amplitude::ZERO),
            Err(Error::ProtocolOrder(_))
        ));
        eve.observe(Amplitude::new(1.0, 1.0));
        eve.forget();
        assert!(eve.on_mask_reveal(Amplitude::ZERO).is_err());
    }

    #[test]
    fn zero_noise_eve_recovers_bits() {
        let omega = 2.57;
        let mask = Amplitude::new(1.7, -0.4);
        let message = Amplitude::new(2.0 * omega, -4.0 * omega);
        let bits = eve_decode_mm(message + mask, Some(mask), omega).unwrap();
        assert_eq!(bits, BitPair::new(1, 0));
    }

    #[test]
    fn logical_decode_needs_full_word() {
        let code = RepCode::new(3).unwrap();
        assert!(eve_decode_logical(&[1, 1], code).is_err());
        assert_eq!(eve_decode_logical(&[1, 0, 1], code).unwrap(), 1);
    }

    #[test]
    fn eavesdropper_completes_codewords() {
        let omega = 1.0;
        let code = RepCode::new(3).unwrap();
        let mut eve = Eavesdropper::new(code, omega);
        let centers = [(2.0, 0.0), (2.0, 2.0), (0.0, 0.0)];
        let mut last = None;
        for (q, p) in centers {
            eve.observe(Amplitude::new(q, p));
            last = Some(eve.on_mask_reveal(Amplitude::ZERO).unwrap());
        }
        let last = last.unwrap();
        assert_eq!(last.physical, BitPair::new(0, 0));
        assert_eq!(last.logical, Some(BitPair::new(1, 0)));
    }
}

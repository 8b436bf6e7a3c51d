//! Square phase-space lattice codec.
//!
//! Cells have side 2Ω and are centered at (2Ωk, 2Ωl); the parities of k and l
//! carry one bit each. Alice draws the signal amplitude from a wide Gaussian,
//! snaps each quadrature to the nearest lattice center with the wanted parity
//! (the message amplitude), and the difference becomes the mask.

use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss_num::{gaussian_interval_prob, sample_gaussian, RngStream, Variance};

/// Default per-quadrature variance of the transmitted signal.
pub const DEFAULT_MODULATION_VARIANCE: f64 = 100.0;

/// A phase-space point as a quadrature pair. The complex amplitude is
/// α = (q + i·p)/√2.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Amplitude {
    pub q: f64,
    pub p: f64,
}

impl Amplitude {
    pub const ZERO: Amplitude = Amplitude { q: 0.0, p: 0.0 };

    pub fn new(q: f64, p: f64) -> Self {
        Amplitude { q, p }
    }

    /// Real and imaginary part of α.
    pub fn to_complex(self) -> (f64, f64) {
        (
            self.q * std::f64::consts::FRAC_1_SQRT_2,
            self.p * std::f64::consts::FRAC_1_SQRT_2,
        )
    }

    pub fn from_complex(re: f64, im: f64) -> Self {
        Amplitude {
            q: re * std::f64::consts::SQRT_2,
            p: im * std::f64::consts::SQRT_2,
        }
    }

    pub fn norm_sqr(self) -> f64 {
        self.q * self.q + self.p * self.p
    }
}

impl Add for Amplitude {
    type Output = Amplitude;

    fn add(self, rhs: Amplitude) -> Amplitude {
        Amplitude::new(self.q + rhs.q, self.p + rhs.p)
    }
}

impl Sub for Amplitude {
    type Output = Amplitude;

    fn sub(self, rhs: Amplitude) -> Amplitude {
        Amplitude::new(self.q - rhs.q, self.p - rhs.p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct BitPair {
    pub u: u8,
    pub u_prime: u8,
}

impl BitPair {
    pub fn new(u: u8, u_prime: u8) -> Self {
        assert!(u <= 1 && u_prime <= 1, "bits must be 0 or 1");
        BitPair { u, u_prime }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    /// Half-step Ω of the lattice.
    pub omega: f64,
    /// Per-quadrature variance of the Gaussian the signal is drawn from.
    pub modulation_variance: f64,
}

impl LatticeConfig {
    pub fn new(omega: f64, modulation_variance: f64) -> Result<Self> {
        let cfg = LatticeConfig {
            omega,
            modulation_variance,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_omega(omega: f64) -> Result<Self> {
        Self::new(omega, DEFAULT_MODULATION_VARIANCE)
    }

    pub fn validate(&self) -> Result<()> {
        check_omega(self.omega)?;
        let floor = 10.0 * self.omega.powi(2).max(1.0);
        if !(self.modulation_variance.is_finite() && self.modulation_variance >= floor) {
            return Err(Error::domain(format!(
                "modulation variance {} is below the highly-modulated floor {floor}",
                self.modulation_variance
            )));
        }
        Ok(())
    }
}

fn check_omega(omega: f64) -> Result<()> {
    if omega.is_finite() && omega > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "lattice half-step must be positive, got {omega}"
        )))
    }
}

/// Index of the cell containing `x`; cell k covers [2Ωk − Ω, 2Ωk + Ω).
pub fn cell_index(x: f64, omega: f64) -> i64 {
    (x / (2.0 * omega) + 0.5).floor() as i64
}

pub fn decode_bit(x: f64, omega: f64) -> u8 {
    cell_index(x, omega).rem_euclid(2) as u8
}

/// Closest center 2Ωk with k ≡ bit (mod 2). Ties go to the larger center.
pub fn nearest_center_with_parity(x: f64, bit: u8, omega: f64) -> f64 {
    2.0 * omega * nearest_index_with_parity(x, bit, omega) as f64
}

fn nearest_index_with_parity(x: f64, bit: u8, omega: f64) -> i64 {
    let offset = bit as f64 * 2.0 * omega;
    let j = ((x - offset) / (4.0 * omega) + 0.5).floor() as i64;
    bit as i64 + 2 * j
}

/// The three amplitudes Alice holds for one message-mode run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Encoded {
    /// α_{uu′}: a lattice center carrying the bit pair.
    pub message: Amplitude,
    /// α_M, revealed only after Bob acknowledges detection.
    pub mask: Amplitude,
    /// ᾱ, the amplitude of the transmitted coherent state. `mask` is
    /// computed as `signal − message`, so that difference is exact in
    /// floating point and ᾱ = α_M + α_{uu′} holds to one rounding.
    pub signal: Amplitude,
}

pub fn encode_pair(bits: BitPair, cfg: &LatticeConfig, rng: &mut RngStream) -> Encoded {
    let draw_q = sample_gaussian(0.0, cfg.modulation_variance, rng);
    let draw_p = sample_gaussian(0.0, cfg.modulation_variance, rng);
    let message = Amplitude::new(
        nearest_center_with_parity(draw_q, bits.u, cfg.omega),
        nearest_center_with_parity(draw_p, bits.u_prime, cfg.omega),
    );
    let signal = Amplitude::new(draw_q, draw_p);
    Encoded {
        message,
        mask: signal - message,
        signal,
    }
}

/// Unmask a measured amplitude and read off the cell parities.
pub fn decode_pair(measured: Amplitude, mask: Amplitude, omega: f64) -> BitPair {
    let unmasked = measured - mask;
    BitPair {
        u: decode_bit(unmasked.q, omega),
        u_prime: decode_bit(unmasked.p, omega),
    }
}

const TAIL_CUTOFF: f64 = 1e-15;

/// Per-bit decoding error of a lattice center perturbed by Gaussian noise of
/// variance Δ: the mass of the odd-neighbour cells,
/// ε(Ω, Δ) = 2 Σ_{j≥0} ∫_{(4j+1)Ω}^{(4j+3)Ω} G_Δ(x) dx.
pub fn intrinsic_error(omega: f64, delta: Variance) -> Result<f64> {
    check_omega(omega)?;
    let mut sum = 0.0;
    let mut j = 0u64;
    loop {
        let lo = (4 * j + 1) as f64 * omega;
        let term = 2.0 * gaussian_interval_prob(lo, lo + 2.0 * omega, delta)?;
        sum += term;
        if term < TAIL_CUTOFF {
            break;
        }
        j += 1;
    }
    Ok(sum)
}

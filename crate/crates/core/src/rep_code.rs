//! Odd-length repetition code with majority-vote decoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss_num::check_probability;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct RepCode {
    n: u32,
}

impl RepCode {
    /// The trivial length-1 code used by the basic protocol.
    pub const IDENTITY: RepCode = RepCode { n: 1 };

    pub fn new(n: u32) -> Result<Self> {
        if n % 2 == 1 {
            Ok(RepCode { n })
        } else {
            Err(Error::domain(format!(
                "repetition length must be odd and positive, got {n}"
            )))
        }
    }

    /// Codeword length n = 2m + 1.
    pub fn n(self) -> u32 {
        self.n
    }

    /// Largest error weight the code corrects.
    pub fn m(self) -> u32 {
        self.n / 2
    }
}

impl TryFrom<u32> for RepCode {
    type Error = Error;

    fn try_from(n: u32) -> Result<Self> {
        RepCode::new(n)
    }
}

impl From<RepCode> for u32 {
    fn from(c: RepCode) -> u32 {
        c.n
    }
}

pub fn encode(bit: u8, code: RepCode) -> Vec<u8> {
    assert!(bit <= 1, "bit must be 0 or 1");
    vec![bit; code.n as usize]
}

pub fn majority_decode(word: &[u8], code: RepCode) -> Result<u8> {
    if word.len() != code.n as usize {
        return Err(Error::domain(format!(
            "codeword has {} bits, code length is {}",
            word.len(),
            code.n
        )));
    }
    let ones = word.iter().filter(|&&b| b != 0).count() as u32;
    Ok(u8::from(ones > code.m()))
}

/// P_n(p) = Σ_{k=m+1}^{n} C(n,k) pᵏ (1−p)ⁿ⁻ᵏ, the probability that a memoryless
/// bit-flip channel defeats majority voting.
pub fn uncorrectable_prob(code: RepCode, p: f64) -> Result<f64> {
    check_probability(p)?;
    if p == 0.0 || p == 1.0 || code.n == 1 {
        return Ok(p);
    }
    if p > 0.5 {
        return Ok(1.0 - upper_tail(code, 1.0 - p));
    }
    Ok(upper_tail(code, p))
}

fn upper_tail(code: RepCode, p: f64) -> f64 {
    let n = code.n as f64;
    let (ln_p, ln_q) = (p.ln(), (-p).ln_1p());
    let ln_n_fact = libm::lgamma(n + 1.0);
    let mut sum = 0.0;
    for k in code.m() + 1..=code.n {
        let k = k as f64;
        let ln_binom = ln_n_fact - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0);
        sum += (ln_binom + k * ln_p + (n - k) * ln_q).exp();
    }
    sum.clamp(0.0, 1.0)
}

/// The physical flip probability p̃ at which P_n(p̃) equals `target_logical_error`.
pub fn critical_point(code: RepCode, target_logical_error: f64) -> Result<f64> {
    if !(target_logical_error > 0.0 && target_logical_error < 0.5) {
        return Err(Error::domain(format!(
            "target logical error must lie in (0, 0.5), got {target_logical_error}"
        )));
    }
    let (mut lo, mut hi) = (0.0_f64, 0.5_f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if uncorrectable_prob(code, mid)? < target_logical_error {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

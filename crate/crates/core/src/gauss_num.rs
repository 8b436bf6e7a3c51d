//! Numerical kernel: Gaussian measurement statistics, regularized incomplete
//! gamma functions, χ² quantiles, binary entropy and the seeded random streams
//! every simulation draws from.
//!
//! Variances are in shot-noise units: a coherent state measured by homodyne
//! detection has Δ = 1/2 per quadrature, by heterodyne detection Δ = 1.

use std::f64::consts::{LN_2, PI};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shot noise of a heterodyne (joint) quadrature measurement.
pub const HETERODYNE: f64 = 1.0;
/// Shot noise of a homodyne (single) quadrature measurement.
pub const HOMODYNE: f64 = 0.5;

/// A strictly positive, finite variance.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Variance(f64);

impl Variance {
    pub const HETERODYNE: Variance = Variance(HETERODYNE);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Variance(value))
        } else {
            Err(Error::domain(format!(
                "variance must be positive and finite, got {value}"
            )))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn std_dev(self) -> f64 {
        self.0.sqrt()
    }
}

impl TryFrom<f64> for Variance {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Variance::new(value)
    }
}

impl From<Variance> for f64 {
    fn from(v: Variance) -> f64 {
        v.0
    }
}

/// A reproducible random stream addressed by `(master_seed, stream_id)`.
///
/// Backed by ChaCha8, a counter-based generator: the seed selects the key and
/// the stream id selects one of 2⁶⁴ independent keystreams, so per-trial
/// streams can be derived without any shared state.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        RngStream {
            master_seed,
            stream_id,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits.
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform random bit.
    pub fn bit(&mut self) -> u8 {
        (self.rng.next_u32() & 1) as u8
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Density of N(mean, variance) at `x`.
pub fn gaussian_pdf(x: f64, mean: f64, variance: Variance) -> f64 {
    let d = x - mean;
    (-d * d / (2.0 * variance.0)).exp() / (2.0 * PI * variance.0).sqrt()
}

/// `∫_a^b G_Δ(x) dx` for the zero-mean Gaussian of variance Δ. Either bound
/// may be infinite.
pub fn gaussian_interval_prob(a: f64, b: f64, variance: Variance) -> Result<f64> {
    if a.is_nan() || b.is_nan() || a > b {
        return Err(Error::domain(format!(
            "interval bounds must satisfy a <= b, got [{a}, {b}]"
        )));
    }
    let s = (2.0 * variance.0).sqrt();
    // Work with upper tails 0.5·erfc(x/s) on whichever side keeps the
    // arguments positive, so far-tail intervals keep full relative precision.
    let prob = if a >= 0.0 {
        0.5 * (libm::erfc(a / s) - libm::erfc(b / s))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b / s) - libm::erfc(-a / s))
    } else {
        1.0 - 0.5 * libm::erfc(-a / s) - 0.5 * libm::erfc(b / s)
    };
    Ok(prob.clamp(0.0, 1.0))
}

/// One draw from N(mean, variance). A zero variance returns `mean` but still
/// consumes a draw, so streams stay aligned.
pub fn sample_gaussian(mean: f64, variance: f64, rng: &mut RngStream) -> f64 {
    assert!(variance >= 0.0, "negative variance {variance}");
    let z: f64 = StandardNormal.sample(rng);
    mean + variance.sqrt() * z
}

/// Regularized lower incomplete gamma function P(a, x) = γ(a, x)/Γ(a).
pub fn regularized_lower_gamma(shape: f64, x: f64) -> Result<f64> {
    gamma_pq(shape, x).map(|(p, _)| p)
}

/// Regularized upper incomplete gamma function Q(a, x) = Γ(a, x)/Γ(a).
pub fn regularized_upper_gamma(shape: f64, x: f64) -> Result<f64> {
    gamma_pq(shape, x).map(|(_, q)| q)
}

/// ln(xᵃ e⁻ˣ / Γ(a)).
///
/// For large `a` the Stirling form a·(ln λ − λ + 1) with λ = x/a avoids the
/// catastrophic cancellation between a·ln x and ln Γ(a).
fn ln_gamma_prefactor(a: f64, x: f64) -> f64 {
    if a < 10.0 {
        return a * x.ln() - x - libm::lgamma(a);
    }
    let d = (x - a) / a;
    a * (d.ln_1p() - d) + 0.5 * a.ln() - 0.5 * (2.0 * PI).ln() - stirling_correction(a)
}

/// ln Γ(a) − [(a − ½) ln a − a + ½ ln 2π], valid for a ≥ 10.
fn stirling_correction(a: f64) -> f64 {
    const COEFFS: [f64; 6] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360360.0,
    ];
    let inv = 1.0 / a;
    let inv2 = inv * inv;
    let mut term = inv;
    let mut sum = 0.0;
    for c in COEFFS {
        sum += c * term;
        term *= inv2;
    }
    sum
}

fn gamma_iteration_budget(a: f64) -> usize {
    10_000 + (50.0 * a.sqrt()) as usize
}

/// Both regularized incomplete gammas. The smaller of the two is evaluated
/// directly (series below a + 1, Lentz continued fraction above) and the
/// other taken as its complement.
fn gamma_pq(a: f64, x: f64) -> Result<(f64, f64)> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::domain(format!("gamma shape must be positive, got {a}")));
    }
    if x.is_nan() || x < 0.0 {
        return Err(Error::domain(format!("gamma argument must be non-negative, got {x}")));
    }
    if x == 0.0 {
        return Ok((0.0, 1.0));
    }
    if x.is_infinite() {
        return Ok((1.0, 0.0));
    }
    let prefactor = ln_gamma_prefactor(a, x).exp();
    let budget = gamma_iteration_budget(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..budget {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * f64::EPSILON {
                let p = (prefactor * sum).min(1.0);
                return Ok((p, 1.0 - p));
            }
        }
        Err(Error::NoConvergence {
            routine: "incomplete gamma series",
            iterations: budget,
        })
    } else {
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=budget {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < f64::EPSILON {
                let q = (prefactor * h).min(1.0);
                return Ok((1.0 - q, q));
            }
        }
        Err(Error::NoConvergence {
            routine: "incomplete gamma continued fraction",
            iterations: budget,
        })
    }
}

/// CDF of the χ² distribution with `dof` degrees of freedom.
pub fn chi2_cdf(dof: u64, x: f64) -> Result<f64> {
    check_dof(dof)?;
    regularized_lower_gamma(dof as f64 / 2.0, x.max(0.0) / 2.0)
}

/// Upper tail of the χ² distribution with `dof` degrees of freedom.
pub fn chi2_sf(dof: u64, x: f64) -> Result<f64> {
    check_dof(dof)?;
    regularized_upper_gamma(dof as f64 / 2.0, x.max(0.0) / 2.0)
}

fn check_dof(dof: u64) -> Result<()> {
    if dof == 0 {
        Err(Error::domain("chi-square needs at least one degree of freedom"))
    } else {
        Ok(())
    }
}

/// The value 𝒱 with CDF_{χ²_dof}(𝒱) = `prob`.
pub fn chi2_quantile(dof: u64, prob: f64) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::domain(format!(
            "quantile probability must lie in (0, 1), got {prob}"
        )));
    }
    if prob > 0.5 {
        chi2_solve(dof, 1.0 - prob, Tail::Upper, None)
    } else {
        chi2_solve(dof, prob, Tail::Lower, None)
    }
}

/// The value 𝒱 with upper tail `tail`, i.e. the (1 − tail)-quantile, without
/// the rounding loss of forming 1 − tail first.
pub fn chi2_upper_quantile(dof: u64, tail: f64) -> Result<f64> {
    chi2_upper_quantile_from(dof, tail, None)
}

/// As [`chi2_upper_quantile`], starting Newton from `guess` when it is
/// positive. Used when walking consecutive degrees of freedom.
pub fn chi2_upper_quantile_from(dof: u64, tail: f64, guess: Option<f64>) -> Result<f64> {
    if !(tail > 0.0 && tail < 1.0) {
        return Err(Error::domain(format!(
            "tail probability must lie in (0, 1), got {tail}"
        )));
    }
    chi2_solve(dof, tail, Tail::Upper, guess)
}

#[derive(Clone, Copy, PartialEq)]
enum Tail {
    Lower,
    Upper,
}

/// Wilson–Hilferty start, then safeguarded Newton on ln(tail prob).
fn chi2_solve(dof: u64, target: f64, tail: Tail, guess: Option<f64>) -> Result<f64> {
    check_dof(dof)?;
    let k = dof as f64 / 2.0;
    if dof == 2 {
        // Exponential distribution: closed form.
        return Ok(match tail {
            Tail::Upper => -2.0 * target.ln(),
            Tail::Lower => -2.0 * (-target).ln_1p(),
        });
    }

    let ln_target = target.ln();
    let eval = |x: f64| -> Result<(f64, f64)> {
        let (p, q) = gamma_pq(k, x / 2.0)?;
        let density = (ln_gamma_prefactor(k, x / 2.0)).exp() / x;
        Ok(match tail {
            Tail::Upper => (q.ln(), -density / q),
            Tail::Lower => (p.ln(), density / p),
        })
    };

    let mut x = match guess {
        Some(g) if g > 0.0 && g.is_finite() => g,
        _ => wilson_hilferty(dof, target, tail),
    };
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    const MAX_ITER: usize = 200;
    for _ in 0..MAX_ITER {
        let (ln_t, slope) = eval(x)?;
        let g = ln_t - ln_target;
        // Upper tail decreases in x, lower tail increases.
        let too_small = match tail {
            Tail::Upper => g > 0.0,
            Tail::Lower => g < 0.0,
        };
        if too_small {
            lo = x;
        } else {
            hi = x;
        }
        if g.abs() < 1e-13 {
            return Ok(x);
        }
        let mut next = x - g / slope;
        if !(next.is_finite() && next > lo && next < hi) {
            next = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * x.max(1.0)
            };
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x {
            return Ok(next);
        }
        x = next;
    }
    Err(Error::NoConvergence {
        routine: "chi-square quantile",
        iterations: MAX_ITER,
    })
}

fn wilson_hilferty(dof: u64, target: f64, tail: Tail) -> f64 {
    let nu = dof as f64;
    let z = match tail {
        Tail::Upper => normal_upper_quantile(target),
        Tail::Lower => -normal_upper_quantile(target),
    };
    let h = 2.0 / (9.0 * nu);
    let w = 1.0 - h + z * h.sqrt();
    let x = nu * w * w * w;
    if x > 0.0 {
        x
    } else {
        // Far lower tail: P ≈ (x/2)^k / Γ(k+1).
        let k = nu / 2.0;
        2.0 * ((target.ln() + libm::lgamma(k + 1.0)) / k).exp()
    }
}

/// Rough standard-normal upper quantile (|error| < 5e-4), only used to seed
/// Newton iterations.
fn normal_upper_quantile(tail: f64) -> f64 {
    let (p, sign) = if tail > 0.5 { (1.0 - tail, -1.0) } else { (tail, 1.0) };
    let t = (-2.0 * p.ln()).sqrt();
    let z = t
        - (2.515517 + 0.802853 * t + 0.010328 * t * t) / (1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t);
    sign * z
}

/// Binary Shannon entropy in bits.
pub fn binary_entropy(p: f64) -> Result<f64> {
    check_probability(p)?;
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    Ok(-(p * p.log2() + (1.0 - p) * (1.0 - p).log2()))
}

/// 1 − H(p), evaluated without cancellation when p is close to 1/2.
pub fn binary_information(p: f64) -> Result<f64> {
    check_probability(p)?;
    let delta = (1.0 - 2.0 * p).abs();
    if delta < 0.25 {
        // 1 − H(½ − δ/2) = [(1+δ)ln(1+δ) + (1−δ)ln(1−δ)] / (2 ln 2)
        let v = ((1.0 + delta) * delta.ln_1p() + (1.0 - delta) * (-delta).ln_1p()) / (2.0 * LN_2);
        Ok(v.max(0.0))
    } else {
        Ok((1.0 - binary_entropy(p)?).max(0.0))
    }
}

pub(crate) fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::domain(format!("probability must lie in [0, 1], got {p}")))
    }
}

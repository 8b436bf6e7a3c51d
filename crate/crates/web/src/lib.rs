//! wasm-bindgen entry points for the static demo page in `www/`.
//!
//! Every export returns a flat `Vec<f64>` (a `Float64Array` in JS) so the
//! page can plot without any serialization layer. Errors surface as
//! exceptions carrying the core error message.

use wasm_bindgen::prelude::*;

use cvqdc_core::adversary::AttackModel;
use cvqdc_core::analytics::{
    best_attack, curve_runs_grid, default_sigma2_grid, survival_vs_stolen_curve, SecurityScenario,
};
use cvqdc_core::gauss_num::sample_gaussian;
use cvqdc_core::harness::channel_for;
use cvqdc_core::lattice::{decode_pair, encode_pair, intrinsic_error as eps, Amplitude, BitPair, LatticeConfig};
use cvqdc_core::protocol::ProtocolConfig;
use cvqdc_core::rep_code::uncorrectable_prob;
use cvqdc_core::{RepCode, RngStream, Variance};

/// Curves stop once survival falls below this.
const CURVE_FLOOR: f64 = 1e-4;

fn js(e: cvqdc_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn preset(name: &str) -> Result<ProtocolConfig, JsError> {
    match name {
        "basic" => Ok(ProtocolConfig::basic()),
        "coded" => Ok(ProtocolConfig::coded()),
        other => Err(JsError::new(&format!(
            "unknown preset {other:?}, expected basic or coded"
        ))),
    }
}

#[wasm_bindgen]
pub fn intrinsic_error(omega: f64, delta: f64) -> Result<f64, JsError> {
    eps(omega, Variance::new(delta).map_err(js)?).map_err(js)
}

/// `[p0, P0, p1, P1, ...]` for p on `[0, 1]` in `steps` intervals.
#[wasm_bindgen]
pub fn pn_curve(n: u32, steps: u32) -> Result<Vec<f64>, JsError> {
    let code = RepCode::new(n).map_err(js)?;
    if steps == 0 {
        return Err(JsError::new("steps must be positive"));
    }
    let mut out = Vec::with_capacity(2 * steps as usize + 2);
    for i in 0..=steps {
        let p = i as f64 / steps as f64;
        out.push(p);
        out.push(uncorrectable_prob(code, p).map_err(js)?);
    }
    Ok(out)
}

/// `[N, I, P]` triples of the survival-vs-stolen-bits curve.
#[wasm_bindgen]
pub fn security_curve(preset_name: &str, sigma2: f64, points: usize) -> Result<Vec<f64>, JsError> {
    let scenario = SecurityScenario::new(preset(preset_name)?, sigma2).map_err(js)?;
    let grid = curve_runs_grid(&scenario, points.max(2), CURVE_FLOOR).map_err(js)?;
    let curve = survival_vs_stolen_curve(&scenario, &grid).map_err(js)?;
    Ok(curve
        .iter()
        .flat_map(|c| [c.runs as f64, c.stolen_bits, c.survival])
        .collect())
}

/// `[σ², bits stolen, runs]` at the most damaging noise for a 1% cutoff.
#[wasm_bindgen]
pub fn best_attack_summary(preset_name: &str) -> Result<Vec<f64>, JsError> {
    let best = best_attack(&preset(preset_name)?, 0.01, &default_sigma2_grid()).map_err(js)?;
    Ok(vec![best.sigma2, best.stolen_bits, best.detection.runs as f64])
}

/// `[q, p, ok]` triples: Bob's unmasked quadratures for `count` message
/// runs and whether both bits decoded correctly (1) or not (0).
#[wasm_bindgen]
pub fn decode_scatter(omega: f64, sigma2: f64, count: u32, seed: u64) -> Result<Vec<f64>, JsError> {
    let lattice = LatticeConfig::with_omega(omega).map_err(js)?;
    let channel = channel_for(sigma2).map_err(js)?;
    Ok(scatter(&lattice, channel.as_ref(), count, seed))
}

fn scatter(lattice: &LatticeConfig, channel: &dyn AttackModel, count: u32, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed, 0);
    let mut out = Vec::with_capacity(3 * count as usize);
    for _ in 0..count {
        let bits = BitPair::new(rng.bit(), rng.bit());
        let tx = encode_pair(bits, lattice, &mut rng);
        let tap = channel.tap(tx.signal, Variance::HETERODYNE, &mut rng);
        let v = tap.bob_variance.value();
        let measured = Amplitude::new(
            sample_gaussian(tx.signal.q, v, &mut rng),
            sample_gaussian(tx.signal.p, v, &mut rng),
        );
        let unmasked = measured - tx.mask;
        out.extend([
            unmasked.q,
            unmasked.p,
            f64::from(u8::from(decode_pair(measured, tx.mask, lattice.omega) == bits)),
        ]);
    }
    out
}

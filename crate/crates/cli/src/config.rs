use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use cvqdc_core::lattice::LatticeConfig;
use cvqdc_core::protocol::ProtocolConfig;
use cvqdc_core::RepCode;

use crate::error::CliError;

/// Environment variable consulted for the master seed when neither the
/// command line nor the config file sets one.
pub const SEED_ENV: &str = "CVQDC_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Preset {
    /// Ω = 2.57, c = 69/70, r = 5e-7, n = 1.
    #[default]
    Basic,
    /// Ω = 1, c = 1/2, r = 5e-7, n = 35.
    Coded,
}

impl Preset {
    pub fn protocol(self) -> ProtocolConfig {
        match self {
            Preset::Basic => ProtocolConfig::basic(),
            Preset::Coded => ProtocolConfig::coded(),
        }
    }
}

/// One value or a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(x) => vec![*x],
            OneOrMany::Many(xs) => xs.clone(),
        }
    }
}

/// The TOML run configuration. Absent keys fall back to the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    /// Control-mode probability.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Significance of the control test.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    /// Repetition-code length.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modulation_variance: Option<f64>,
    /// Cloner noise; 0 is the identity channel.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<OneOrMany>,
    /// Message bits per grid point.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_runs: Option<u64>,
}

pub const DEFAULT_TRIALS: u64 = 10_000;

/// A configuration with every value filled in and validated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub protocol: ProtocolConfig,
    pub sigma2: Vec<f64>,
    pub trials: u64,
    pub seed: Option<u64>,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain scalar fields always serialize")
    }

    pub fn resolve(&self, preset: Preset) -> Result<Resolved, CliError> {
        let mut protocol = preset.protocol();
        let omega = self.omega.unwrap_or(protocol.lattice.omega);
        let mv = self.modulation_variance.unwrap_or(protocol.lattice.modulation_variance);
        protocol.lattice = LatticeConfig::new(omega, mv)?;
        if let Some(c) = self.c {
            protocol.control_prob = c;
        }
        if let Some(r) = self.r {
            protocol.significance = r;
        }
        if let Some(n) = self.n {
            protocol.code = RepCode::new(n)?;
        }
        if let Some(max_runs) = self.max_runs {
            protocol.max_runs = max_runs;
        }
        protocol.validate()?;

        let sigma2 = self.sigma2.as_ref().map(OneOrMany::to_vec).unwrap_or_else(|| vec![0.0]);
        if sigma2.is_empty() || sigma2.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(CliError::Usage(format!(
                "sigma2 values must be non-negative, got {sigma2:?}"
            )));
        }
        let trials = self.trials.unwrap_or(DEFAULT_TRIALS);
        if trials < 2 * cvqdc_core::harness::MIN_TRIALS {
            return Err(CliError::Usage(format!(
                "trials must be at least {} message bits, got {trials}",
                2 * cvqdc_core::harness::MIN_TRIALS
            )));
        }
        Ok(Resolved {
            protocol,
            sigma2,
            trials,
            seed: self.seed,
        })
    }
}

/// `--seed` beats the config file, which beats the environment; the
/// default is 0.
pub fn effective_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(0),
    }
}

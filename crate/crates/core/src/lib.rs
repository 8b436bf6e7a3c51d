//! Simulator and security analyzer for quantum direct communication with
//! coherent states.
//!
//! Message bits ride on the cell parities of a square phase-space lattice,
//! hidden under a Gaussian mask that is announced only after Bob has
//! measured. Random control runs let Bob estimate the channel noise with a
//! χ² test and stop the session as soon as noise shows up. The crate covers
//! the codec, the two-party protocol, a Gaussian cloning attack, the
//! repetition-code variant, the closed-form survival/stolen-information
//! analysis and Monte Carlo cross-checks of all of it.

pub mod adversary;
pub mod analytics;
mod error;
pub mod gauss_num;
pub mod harness;
pub mod lattice;
pub mod protocol;
pub mod rep_code;

pub use error::{Error, Result};
pub use gauss_num::{RngStream, Variance};
pub use lattice::{Amplitude, BitPair, LatticeConfig};
pub use protocol::{ProtocolConfig, SessionResult};
pub use rep_code::RepCode;

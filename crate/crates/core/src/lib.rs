//! Calibration and evaluation of binary detectors under extreme
//! false-positive-rate constraints, driven by ensemble uncertainty.
//!
//! The crate consumes precomputed ensemble member scores ([`data`]), derives
//! per-sample uncertainties ([`uncertainty`]), selects and evaluates decision
//! thresholds ([`roc`]), fits uncertainty-aware local threshold adjustments
//! ([`adjust`]), and runs the protocol and analysis studies ([`protocol`],
//! [`analysis`]). [`synth`] generates seeded datasets for all of the above.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjust;
pub mod analysis;
pub mod data;
pub mod error;
pub mod protocol;
pub mod roc;
pub mod synth;
pub mod uncertainty;

pub use error::{Error, Result};

/// Mixes two 64-bit words into one with the SplitMix64 finalizer.
///
/// Used wherever a child seed has to be derived from a parent seed and an
/// index, so derived streams do not depend on iteration or thread order.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

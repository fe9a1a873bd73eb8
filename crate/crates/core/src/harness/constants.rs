//! Calibrated constants, frozen in `data/constants.toml`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FROZEN: &str = include_str!("../../data/constants.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Root seed of the pilot runs that produced this file.
    pub pilot_seed: u64,
    /// Amplification multiplier `lambda`.
    pub amp_factor: f64,
    /// Sampling constant `c_s`.
    pub sample_const: f64,
    /// Extra levels `c0` of the Top-k selection pre-pass.
    pub select_extra_levels: u32,
    pub bounds: Bounds,
    pub tolerances: Tolerances,
}

/// Multipliers of the expected-message bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    /// CoFaSel: `c' (1/phi)(log_{1/phi}(N/k) + 1)`.
    pub c_prime: f64,
    /// Top-k via selection: `c1 (k + log2 n)`.
    pub c1: f64,
    /// INITIALIZE: `c2 * 2 log2 n`.
    pub c2: f64,
    /// REFRESH: `c3 * 2 log2 m + c4`.
    pub c3: f64,
    pub c4: f64,
    /// Multi-step Top-k: `k + c5 (log2 m + log2 log2 n) + c6`.
    pub c5: f64,
    pub c6: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Allowed failure frequency of sketch guarantees (RRS, survival).
    pub sketch: f64,
    /// Allowed fallback frequency of multi-step queries.
    pub fallback: f64,
}

impl Constants {
    /// The constants shipped with the crate.
    pub fn frozen() -> Self {
        Self::parse(FROZEN).expect("shipped constants file parses")
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Constants(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("constants serialize")
    }
}

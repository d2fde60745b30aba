use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Mixture weight, windows and size parameter used by every scripted
/// experiment, fixed once by the alpha selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrozenSettings {
    pub alpha: f64,
    /// Detector changepoint window.
    pub m0: usize,
    pub m1: usize,
    /// Window for the analytic bounds (must start at 1 or later).
    pub theory_m0: u64,
    pub theory_m1: u64,
    pub n_effective: f64,
    /// Evidence behind the choice of `alpha`.
    #[serde(default)]
    pub alpha_sweep: Vec<super::AlphaCandidate>,
    /// Evidence behind the choice of `n_effective`.
    #[serde(default)]
    pub n_effective_sweep: Vec<super::tables::SizeCandidate>,
}

const COMMITTED: &str = include_str!("../../../../settings/frozen.json");

impl FrozenSettings {
    /// The settings file committed with the repository.
    pub fn committed() -> Self {
        serde_json::from_str(COMMITTED).expect("committed settings file is valid")
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("settings serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid("alpha", format!("{} is not in (0, 1]", self.alpha)));
        }
        if self.m0 > self.m1 {
            return Err(invalid("m0", format!("{} exceeds m1 = {}", self.m0, self.m1)));
        }
        if self.theory_m0 < 1 || self.theory_m1 < self.theory_m0 {
            return Err(invalid("theory_m0", "need 1 <= theory_m0 <= theory_m1"));
        }
        if !(self.n_effective > 0.0) {
            return Err(invalid("n_effective", "must be positive"));
        }
        Ok(())
    }
}

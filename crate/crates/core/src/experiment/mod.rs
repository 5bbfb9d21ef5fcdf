//! Named experiment presets driven by a TOML config.
//!
//! Every preset writes `<out>/<preset>/<cell>/…` per cell plus
//! `<out>/<preset>/summary.json`. Cell names carry the seed they ran with.

mod config;
mod presets;

pub use config::{
    async_rounds, parse_config, ConvergenceSection, ExperimentConfig, LeakageSection, ModelSection,
    OutputSection, PrivacySection, SimSection, SweepSection, TrainSection,
};
pub use presets::{
    build_classifier, convergence_trial, run_preset, Check, ClassifierSetup, ConvergenceTrial, PresetOutcome,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `{sync, async} × {ldp on, off}` with paired seeds.
    BaselineCompare,
    /// Detection over the `s × p` grid plus one undefended run per `p`.
    DetectionSweep,
    /// Training accuracy and reconstruction rate across noise multipliers.
    PrivacySweep,
    /// Inversion trials without noise and at the calibrated noise level.
    LeakageEval,
    /// Contraction checks on seeded quadratics.
    ConvergenceCheck,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::BaselineCompare,
        Preset::DetectionSweep,
        Preset::PrivacySweep,
        Preset::LeakageEval,
        Preset::ConvergenceCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::BaselineCompare => "baseline_compare",
            Preset::DetectionSweep => "detection_sweep",
            Preset::PrivacySweep => "privacy_sweep",
            Preset::LeakageEval => "leakage_eval",
            Preset::ConvergenceCheck => "convergence_check",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::domain("preset", format!("unknown preset `{s}`")))
    }
}

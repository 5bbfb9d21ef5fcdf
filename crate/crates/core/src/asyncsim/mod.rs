//! Discrete-event simulation of the cloud and its edge nodes.
//!
//! A single event loop owns all node and cloud state. Nodes train on the
//! model they last received, clip and perturb their update, optionally
//! sparsify it through a residual buffer, and upload it after a sampled
//! latency. The cloud either mixes each arrival into the global model
//! (asynchronous mode) or waits for all nodes at a barrier (synchronous
//! mode). Simulated time only ever comes from sampled durations, so a run is
//! a pure function of its configuration and seed.

mod aggregate;
mod engine;
mod events;
mod timing;
mod topk;
mod workload;

pub use aggregate::{aggregate_aldp, aggregate_async, MsgSummary, UpdateMsg};
pub use engine::{run_simulation, SimOutput};
pub use events::{Event, EventKind, EventQueue};
pub use timing::{build_profiles, NodeProfile, TimeDist, TimingConfig};
pub use topk::select_topk;
pub use workload::{ClassifierWorkload, TrainContext, TrainStreams, Workload};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::TrainConfig;
use crate::privacy::PrivacyParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Async,
    Sync,
}

/// What an asynchronous node does after uploading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalPolicy {
    /// Keep training from the local model; adopt a newer global model at
    /// the start of the next session if one has arrived.
    Continue,
    /// Idle until the cloud's reply arrives, then train from it.
    Refresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub nodes: usize,
    pub malicious_fraction: f64,
    /// Weight on the current global model when mixing.
    pub alpha: f64,
    /// Replace mixing by a plain average of node models (`α = 0`).
    pub plain_average: bool,
    pub mode: Mode,
    pub ldp: bool,
    /// Also add `N(0, (σS)²)` after every local mini-batch.
    pub per_batch_noise: bool,
    pub detection: bool,
    pub topk_ratio: f64,
    /// Number of aggregation events.
    pub rounds: usize,
    /// Arrivals per aggregation in asynchronous mode without detection.
    pub buffer_size: usize,
    pub local_policy: LocalPolicy,
    /// Evaluate the global model every this many aggregation events (and at the last one).
    pub eval_every: usize,
    pub privacy: PrivacyParams,
    pub train: TrainConfig,
    pub timing: TimingConfig,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            nodes: 10,
            malicious_fraction: 0.3,
            alpha: 0.5,
            plain_average: false,
            mode: Mode::Async,
            ldp: true,
            per_batch_noise: false,
            detection: false,
            topk_ratio: 1.0,
            rounds: 100,
            buffer_size: 1,
            local_policy: LocalPolicy::Continue,
            eval_every: 1,
            privacy: PrivacyParams::calibrated(8.0, 1e-3, 1.0).expect("default privacy parameters are valid"),
            train: TrainConfig {
                learning_rate: 0.001,
                batch_size: 128,
                local_epochs: 1,
            },
            timing: TimingConfig::default(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 {
            return Err(Error::domain("sim.nodes", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.malicious_fraction) {
            return Err(Error::domain("sim.malicious_fraction", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::domain("sim.alpha", "must lie in [0, 1]"));
        }
        if !(self.topk_ratio > 0.0 && self.topk_ratio <= 1.0) {
            return Err(Error::domain("sim.topk_ratio", "must lie in (0, 1]"));
        }
        if self.rounds == 0 {
            return Err(Error::domain("sim.rounds", "must be at least 1"));
        }
        if self.buffer_size == 0 {
            return Err(Error::domain("sim.buffer_size", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::domain("sim.eval_every", "must be at least 1"));
        }
        if !(self.privacy.clip_norm > 0.0) || !(self.privacy.sigma >= 0.0) {
            return Err(Error::domain("privacy", "clip_norm must be positive and sigma non-negative"));
        }
        self.train.validate()?;
        self.timing.validate()
    }

    /// Mixing weight actually applied to the global model.
    pub fn effective_alpha(&self) -> f64 {
        if self.plain_average {
            0.0
        } else {
            self.alpha
        }
    }

    /// Updates gathered per aggregation event.
    pub fn batch_size(&self) -> usize {
        match (self.mode, self.detection) {
            (Mode::Sync, _) | (Mode::Async, true) => self.nodes,
            (Mode::Async, false) => self.buffer_size,
        }
    }
}

/// `κ = comm / (comp + comm)`.
pub fn comm_efficiency(comm_time: f64, comp_time: f64) -> Result<f64> {
    if !(comm_time >= 0.0 && comp_time >= 0.0) {
        return Err(Error::domain("comm_time/comp_time", "must be non-negative"));
    }
    if comm_time == 0.0 && comp_time == 0.0 {
        return Err(Error::domain("comm_time/comp_time", "must not both be zero"));
    }
    Ok(comm_time / (comp_time + comm_time))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_arithmetic() {
        assert_eq!(comm_efficiency(1.0, 3.0).unwrap(), 0.25);
        assert_eq!(comm_efficiency(2.0, 0.0).unwrap(), 1.0);
        assert!(comm_efficiency(0.0, 0.0).is_err());
        assert!(comm_efficiency(-1.0, 1.0).is_err());
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = SimConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.effective_alpha(), 0.5);
        assert_eq!(cfg.batch_size(), 1);
    }

    #[test]
    fn invalid_alpha_names_field() {
        let cfg = SimConfig {
            alpha: 1.5,
            ..SimConfig::default()
        };
        match cfg.validate() {
            Err(Error::Domain { field, .. }) => assert_eq!(field, "sim.alpha"),
            other => panic!("unexpected {other:?}"),
        }
    }
}

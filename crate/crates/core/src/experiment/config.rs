use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::MetricsFormat;
use crate::asyncsim::{LocalPolicy, Mode, SimConfig, TimingConfig};
use crate::attacks::AttackConfig;
use crate::data::DataSpec;
use crate::detection::DetectionConfig;
use crate::error::{Error, Result};
use crate::learner::{ModelKind, ModelSpec, TrainConfig};
use crate::privacy::PrivacyParams;

use super::Preset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub nodes: usize,
    pub malicious_fraction: f64,
    pub alpha: f64,
    pub plain_average: bool,
    pub mode: Mode,
    pub ldp: bool,
    pub per_batch_noise: bool,
    pub detection: bool,
    pub topk_ratio: f64,
    /// Synchronous rounds; asynchronous cells process the same number of node updates.
    pub rounds: usize,
    pub buffer_size: usize,
    pub local_policy: LocalPolicy,
    pub eval_every: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            nodes: d.nodes,
            malicious_fraction: d.malicious_fraction,
            alpha: d.alpha,
            plain_average: d.plain_average,
            mode: d.mode,
            ldp: d.ldp,
            per_batch_noise: d.per_batch_noise,
            detection: d.detection,
            topk_ratio: d.topk_ratio,
            rounds: 20,
            buffer_size: d.buffer_size,
            local_policy: d.local_policy,
            eval_every: d.eval_every,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrivacySection {
    pub epsilon: f64,
    pub delta: f64,
    pub clip_norm: f64,
    /// Explicit noise multiplier; overrides calibration from `epsilon`.
    pub sigma: Option<f64>,
}

impl Default for PrivacySection {
    fn default() -> Self {
        Self {
            epsilon: 8.0,
            delta: 1e-3,
            clip_norm: 1.0,
            sigma: None,
        }
    }
}

impl PrivacySection {
    pub fn resolve(&self) -> Result<PrivacyParams> {
        match self.sigma {
            Some(s) => PrivacyParams::with_sigma(s, self.delta, self.clip_norm),
            None => PrivacyParams::calibrated(self.epsilon, self.delta, self.clip_norm),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub hidden_dim: usize,
    pub seed: Option<u64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::LinearSoftmax,
            hidden_dim: 16,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 128,
            local_epochs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub s_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            s_values: vec![50.0, 60.0, 70.0, 80.0, 90.0],
            p_values: vec![0.1, 0.2, 0.3],
            sigmas: vec![0.0, 0.1, 0.25, 0.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeakageSection {
    pub trials: usize,
}

impl Default for LeakageSection {
    fn default() -> Self {
        Self { trials: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceSection {
    pub dim: usize,
    pub mu: f64,
    pub l: f64,
    pub lambda: f64,
    /// Simulator mixing weight for the mixed run.
    pub alpha: f64,
    pub nodes: usize,
    pub rounds: usize,
    /// Length of the plain-averaging run used for the per-epoch rate.
    pub gd_rounds: usize,
    pub local_epochs: usize,
    pub noise_std: f64,
    pub seeds: usize,
    pub slack: f64,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        Self {
            dim: 20,
            mu: 1.0,
            l: 10.0,
            lambda: 0.05,
            alpha: 0.5,
            nodes: 10,
            rounds: 30,
            gd_rounds: 60,
            local_epochs: 1,
            noise_std: 0.0,
            seeds: 20,
            slack: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub format: MetricsFormat,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            format: MetricsFormat::Csv,
        }
    }
}

/// Everything a preset needs, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub preset: Option<Preset>,
    pub seed: u64,
    /// Independent repetitions per cell, seeded `seed, seed+1, …`.
    pub repeats: usize,
    pub sim: SimSection,
    pub train: TrainSection,
    pub privacy: PrivacySection,
    pub timing: TimingConfig,
    pub model: ModelSection,
    pub data: DataSpec,
    pub detection: DetectionConfig,
    pub attack: AttackConfig,
    pub sweep: SweepSection,
    pub leakage: LeakageSection,
    pub convergence: ConvergenceSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: None,
            seed: 42,
            repeats: 1,
            sim: SimSection::default(),
            train: TrainSection::default(),
            privacy: PrivacySection::default(),
            timing: TimingConfig::default(),
            model: ModelSection::default(),
            data: DataSpec::default(),
            detection: DetectionConfig::default(),
            attack: AttackConfig::default(),
            sweep: SweepSection::default(),
            leakage: LeakageSection::default(),
            convergence: ConvergenceSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::domain("repeats", "must be at least 1"));
        }
        self.sim_config(self.seed)?.validate()?;
        self.model_spec()?.validate()?;
        self.detection.validate()?;
        self.attack.validate()?;
        for (field, label) in [("attack.flip_from", self.attack.flip_from), ("attack.flip_to", self.attack.flip_to)] {
            if label >= self.data.num_classes {
                return Err(Error::domain(
                    field,
                    format!("label {label} does not exist with {} classes", self.data.num_classes),
                ));
            }
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) || self.data.test_fraction == 0.0 {
            return Err(Error::domain("data.test_fraction", "must lie in (0, 1)"));
        }
        if self.data.per_node_size == 0 {
            return Err(Error::domain("data.per_node_size", "must be at least 1"));
        }
        for (i, s) in self.sweep.s_values.iter().enumerate() {
            if !(*s > 0.0 && *s <= 100.0) {
                return Err(Error::domain(format!("sweep.s_values[{i}]"), "must lie in (0, 100]"));
            }
        }
        for (i, p) in self.sweep.p_values.iter().enumerate() {
            if !(0.0..1.0).contains(p) {
                return Err(Error::domain(format!("sweep.p_values[{i}]"), "must lie in [0, 1)"));
            }
        }
        for (i, s) in self.sweep.sigmas.iter().enumerate() {
            if !(*s >= 0.0 && s.is_finite()) {
                return Err(Error::domain(format!("sweep.sigmas[{i}]"), "must be finite and non-negative"));
            }
        }
        let c = &self.convergence;
        if !(c.mu > 0.0 && c.mu <= c.l) {
            return Err(Error::domain("convergence.mu", "need 0 < mu <= l"));
        }
        if !(c.lambda > 0.0 && c.lambda < 1.0 / c.l) {
            return Err(Error::domain("convergence.lambda", "need 0 < lambda < 1/l"));
        }
        if !(0.0..1.0).contains(&c.alpha) {
            return Err(Error::domain("convergence.alpha", "must lie in [0, 1)"));
        }
        if c.seeds == 0 || c.rounds == 0 || c.gd_rounds == 0 || c.nodes == 0 || c.local_epochs == 0 || c.dim == 0 {
            return Err(Error::domain("convergence", "counts must be at least 1"));
        }
        Ok(())
    }

    /// Simulator settings for one cell; `rounds` is still in synchronous units.
    pub fn sim_config(&self, seed: u64) -> Result<SimConfig> {
        let s = &self.sim;
        Ok(SimConfig {
            nodes: s.nodes,
            malicious_fraction: s.malicious_fraction,
            alpha: s.alpha,
            plain_average: s.plain_average,
            mode: s.mode,
            ldp: s.ldp,
            per_batch_noise: s.per_batch_noise,
            detection: s.detection,
            topk_ratio: s.topk_ratio,
            rounds: s.rounds,
            buffer_size: s.buffer_size,
            local_policy: s.local_policy,
            eval_every: s.eval_every,
            privacy: self.privacy.resolve()?,
            train: TrainConfig {
                learning_rate: self.train.learning_rate,
                batch_size: self.train.batch_size,
                local_epochs: self.train.local_epochs,
            },
            timing: self.timing,
            seed,
        })
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let seed = self.model.seed.unwrap_or(self.seed);
        let spec = match self.model.kind {
            ModelKind::LinearSoftmax => ModelSpec::linear(self.data.dim, self.data.num_classes, seed),
            ModelKind::OneHiddenLayer => {
                ModelSpec::hidden(self.data.dim, self.model.hidden_dim, self.data.num_classes, seed)
            }
        };
        Ok(spec)
    }
}

/// Read and validate a config file; an empty file yields all defaults.
///
/// Relative IDX paths are taken relative to the directory holding the file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut cfg = ExperimentConfig::from_toml(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    for pair in &mut cfg.data.idx {
        for p in [&mut pair.images, &mut pair.labels] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(cfg)
}

/// Aggregation events that give an asynchronous run the same number of
/// node updates as `sync_rounds` synchronous rounds.
pub fn async_rounds(cfg: &SimConfig, sync_rounds: usize) -> usize {
    if cfg.mode == Mode::Sync {
        return sync_rounds;
    }
    (sync_rounds * cfg.nodes).div_ceil(cfg.batch_size())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let sim = cfg.sim_config(cfg.seed).unwrap();
        assert_eq!(sim.nodes, 10);
        assert_eq!(sim.malicious_fraction, 0.3);
        assert_eq!(sim.alpha, 0.5);
        assert_eq!(sim.train.learning_rate, 0.001);
        assert_eq!(sim.train.batch_size, 128);
        assert_eq!(sim.privacy.epsilon, 8.0);
        assert_eq!(sim.privacy.delta, 1e-3);
        assert_eq!(cfg.detection.s_percent, 80.0);
    }

    #[test]
    fn override_keeps_other_defaults() {
        let cfg = ExperimentConfig::from_toml("[sim]\nalpha = 0.9\n").unwrap();
        assert_eq!(cfg.sim.alpha, 0.9);
        assert_eq!(cfg.sim.nodes, 10);
        assert_eq!(cfg.train, TrainSection::default());
    }

    #[test]
    fn domain_error_names_field() {
        match ExperimentConfig::from_toml("[sim]\nalpha = 1.5\n") {
            Err(Error::Domain { field, .. }) => assert_eq!(field, "sim.alpha"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = ExperimentConfig::from_toml("seed = 1\n[sim]\nalpha = 0.5\nbogus = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus"), "{msg}");
        assert!(msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn flip_labels_must_exist() {
        match ExperimentConfig::from_toml("[data]\nnum_classes = 5\n") {
            Err(Error::Domain { field, .. }) => assert_eq!(field, "attack.flip_to"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn async_update_budget() {
        let mut sim = SimConfig::default();
        assert_eq!(async_rounds(&sim, 20), 200);
        sim.detection = true;
        assert_eq!(async_rounds(&sim, 20), 20);
        sim.mode = Mode::Sync;
        assert_eq!(async_rounds(&sim, 20), 20);
    }
}

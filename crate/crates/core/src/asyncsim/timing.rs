use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{role, Stream};

/// Smallest duration ever sampled; keeps every interval strictly positive.
const MIN_DURATION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "dist")]
pub enum TimeDist {
    Fixed { seconds: f64 },
    LogNormal { median: f64, sigma: f64 },
    /// `shift + Exp(mean)`.
    ShiftedExp { shift: f64, mean: f64 },
}

impl TimeDist {
    pub fn sample(&self, stream: &mut Stream) -> f64 {
        let t = match *self {
            TimeDist::Fixed { seconds } => seconds,
            TimeDist::LogNormal { median, sigma } => median * (sigma * stream.gaussian()).exp(),
            TimeDist::ShiftedExp { shift, mean } => shift + stream.exponential(mean),
        };
        t.max(MIN_DURATION)
    }

    fn validate(&self, field: &str) -> Result<()> {
        let ok = match *self {
            TimeDist::Fixed { seconds } => seconds > 0.0,
            TimeDist::LogNormal { median, sigma } => median > 0.0 && sigma >= 0.0,
            TimeDist::ShiftedExp { shift, mean } => shift >= 0.0 && mean >= 0.0 && shift + mean > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(field, "durations must be positive"))
        }
    }
}

/// Timing model shared by all nodes.
///
/// Node `k` computes each local epoch in `LogNormal(median·s_k, compute_sigma)`
/// seconds where `s_k = exp(heterogeneity · z_k)` and `z_k` is a standard
/// normal from the node's profile stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    pub compute_median: f64,
    pub compute_sigma: f64,
    pub heterogeneity: f64,
    pub uplink: TimeDist,
    pub downlink: TimeDist,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            compute_median: 1.0,
            compute_sigma: 0.25,
            heterogeneity: 0.5,
            uplink: TimeDist::ShiftedExp {
                shift: 0.05,
                mean: 0.1,
            },
            downlink: TimeDist::ShiftedExp {
                shift: 0.02,
                mean: 0.05,
            },
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.compute_median > 0.0) || self.compute_sigma < 0.0 || self.heterogeneity < 0.0 {
            return Err(Error::domain(
                "timing",
                "compute_median must be positive; compute_sigma and heterogeneity non-negative",
            ));
        }
        self.uplink.validate("timing.uplink")?;
        self.downlink.validate("timing.downlink")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub node_id: usize,
    pub compute: TimeDist,
    pub uplink: TimeDist,
    pub downlink: TimeDist,
    pub is_malicious: bool,
}

/// Draw one profile per node from its own profile stream.
pub fn build_profiles(timing: &TimingConfig, nodes: usize, malicious: &[usize], seed: u64) -> Vec<NodeProfile> {
    (0..nodes)
        .map(|k| {
            let mut s = Stream::derive(seed, role::PROFILE, k as u64);
            let scale = (timing.heterogeneity * s.gaussian()).exp();
            NodeProfile {
                node_id: k,
                compute: TimeDist::LogNormal {
                    median: timing.compute_median * scale,
                    sigma: timing.compute_sigma,
                },
                uplink: timing.uplink,
                downlink: timing.downlink,
                is_malicious: malicious.contains(&k),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_are_positive() {
        let mut s = Stream::from_seed(1);
        let dists = [
            TimeDist::Fixed { seconds: 0.5 },
            TimeDist::LogNormal { median: 1.0, sigma: 2.0 },
            TimeDist::ShiftedExp { shift: 0.0, mean: 1.0 },
        ];
        for d in dists {
            for _ in 0..1000 {
                assert!(d.sample(&mut s) > 0.0);
            }
        }
    }

    #[test]
    fn profiles_do_not_depend_on_node_count() {
        let t = TimingConfig::default();
        let small = build_profiles(&t, 3, &[1], 9);
        let large = build_profiles(&t, 8, &[1], 9);
        assert_eq!(small[..], large[..3]);
        assert!(small[1].is_malicious && !small[0].is_malicious);
    }

    #[test]
    fn invalid_timing_is_rejected() {
        let mut t = TimingConfig::default();
        t.uplink = TimeDist::Fixed { seconds: 0.0 };
        assert!(t.validate().is_err());
    }
}

//! Cloud-side screening of node updates against a clean test set.
//!
//! Every update is turned into the sub-model the cloud would obtain from
//! that node alone, each sub-model is scored on the cloud test set, and only
//! the top `s` percent (ties at the cut-off included) are aggregated.

use serde::{Deserialize, Serialize};

use crate::asyncsim::{aggregate_aldp, aggregate_async, UpdateMsg};
use crate::error::{Error, Result};
use crate::learner::{self, Dataset, ModelSpec};
use crate::params::ParamVector;

/// Guards the `⌈s·n/100⌉` computation against floating-point overshoot.
const CEIL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    pub s_percent: f64,
    /// Screen every `cadence`-th aggregation event.
    pub cadence: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            s_percent: 80.0,
            cadence: 1,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_percent > 0.0 && self.s_percent <= 100.0) {
            return Err(Error::domain("detection.s_percent", "must lie in (0, 100]"));
        }
        if self.cadence == 0 {
            return Err(Error::domain("detection.cadence", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeScore {
    pub node_id: usize,
    pub accuracy: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    /// Aggregation event the screening belongs to.
    pub round: u64,
    /// One entry per screened update, in arrival order.
    pub per_node: Vec<NodeScore>,
    pub threshold: f64,
    /// Ids of nodes whose update was kept, ascending and deduplicated.
    pub normal: Vec<usize>,
}

impl DetectionReport {
    /// Ids of nodes with at least one flagged update, ascending and deduplicated.
    pub fn flagged(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .per_node
            .iter()
            .filter(|n| n.flagged)
            .map(|n| n.node_id)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Score each update's sub-model `aggregate_async(global, global + Δ_k, α)` with `score`.
pub fn evaluate_submodels_with<F>(
    msgs: &[&UpdateMsg],
    global: &ParamVector,
    alpha: f64,
    score: F,
) -> Result<Vec<(usize, f64)>>
where
    F: Fn(&ParamVector) -> Result<f64>,
{
    if msgs.is_empty() {
        return Err(Error::Empty("update batch"));
    }
    msgs.iter()
        .map(|m| {
            let local = global.add(&m.delta)?;
            let sub = aggregate_async(global, &local, alpha)?;
            Ok((m.node_id, score(&sub)?))
        })
        .collect()
}

/// Accuracy of every update's sub-model on the cloud test set.
pub fn evaluate_submodels(
    msgs: &[&UpdateMsg],
    global: &ParamVector,
    spec: &ModelSpec,
    test: &Dataset,
    alpha: f64,
) -> Result<Vec<(usize, f64)>> {
    evaluate_submodels_with(msgs, global, alpha, |m| learner::evaluate(m, spec, test))
}

/// Accuracy of the `⌈s·n/100⌉`-th best score.
pub fn threshold_topk(accuracies: &[f64], s_percent: f64) -> Result<f64> {
    if accuracies.is_empty() {
        return Err(Error::Empty("accuracy set"));
    }
    if !(s_percent > 0.0 && s_percent <= 100.0) {
        return Err(Error::domain("detection.s_percent", "must lie in (0, 100]"));
    }
    let mut sorted = accuracies.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len();
    let keep = ((s_percent * n as f64 / 100.0 - CEIL_EPS).ceil() as usize).clamp(1, n);
    Ok(sorted[keep - 1])
}

/// Split scored nodes into `(normal, flagged)`; normal means `accuracy ≥ threshold`.
pub fn detect(scores: &[(usize, f64)], threshold: f64) -> (Vec<usize>, Vec<usize>) {
    let (normal, flagged): (Vec<_>, Vec<_>) = scores.iter().partition(|(_, a)| *a >= threshold);
    (
        normal.into_iter().map(|(k, _)| k).collect(),
        flagged.into_iter().map(|(k, _)| k).collect(),
    )
}

/// Aggregate only the messages whose node is in `normal`.
pub fn aggregate_normal(
    global: &ParamVector,
    msgs: &[&UpdateMsg],
    normal: &[usize],
    alpha: f64,
) -> Result<ParamVector> {
    let kept: Vec<&UpdateMsg> = msgs
        .iter()
        .copied()
        .filter(|m| normal.contains(&m.node_id))
        .collect();
    if kept.is_empty() {
        return Err(Error::Empty("normal node set"));
    }
    aggregate_aldp(global, &kept, alpha)
}

/// Score, threshold and flag one batch of updates.
///
/// Each update is judged on its own score, so a node that appears twice in
/// the batch can have one update kept and the other dropped.
pub fn screen<F>(
    round: u64,
    msgs: &[&UpdateMsg],
    global: &ParamVector,
    alpha: f64,
    cfg: &DetectionConfig,
    score: F,
) -> Result<(DetectionReport, Vec<bool>)>
where
    F: Fn(&ParamVector) -> Result<f64>,
{
    let scores = evaluate_submodels_with(msgs, global, alpha, score)?;
    let accs: Vec<f64> = scores.iter().map(|(_, a)| *a).collect();
    let threshold = threshold_topk(&accs, cfg.s_percent)?;
    let keep: Vec<bool> = accs.iter().map(|a| *a >= threshold).collect();
    let per_node = scores
        .iter()
        .zip(&keep)
        .map(|(&(node_id, accuracy), &k)| NodeScore {
            node_id,
            accuracy,
            flagged: !k,
        })
        .collect();
    let mut normal: Vec<usize> = scores
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|((id, _), _)| *id)
        .collect();
    normal.sort_unstable();
    normal.dedup();
    Ok((
        DetectionReport {
            round,
            per_node,
            threshold,
            normal,
        },
        keep,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(node_id: usize, delta: &[f64]) -> UpdateMsg {
        UpdateMsg {
            node_id,
            delta: ParamVector::from_slice(delta),
            base_version: 0,
            send_time: 0.0,
            local_epochs: 1,
        }
    }

    #[test]
    fn threshold_by_rank() {
        let a = [0.9, 0.85, 0.8, 0.2];
        assert_eq!(threshold_topk(&a, 50.0).unwrap(), 0.85);
        assert_eq!(threshold_topk(&a, 100.0).unwrap(), 0.2);
        assert_eq!(threshold_topk(&[0.4; 5], 20.0).unwrap(), 0.4);
        let ten: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(threshold_topk(&ten, 80.0).unwrap(), 0.2);
        assert!(threshold_topk(&[], 50.0).is_err());
    }

    #[test]
    fn detect_partitions_nodes() {
        let scores = [(0, 0.9), (1, 0.85), (2, 0.8), (3, 0.2)];
        let (normal, flagged) = detect(&scores, 0.85);
        assert_eq!(normal, vec![0, 1]);
        assert_eq!(flagged, vec![2, 3]);
        let (normal, flagged) = detect(&[(4, 0.1)], threshold_topk(&[0.1], 10.0).unwrap());
        assert_eq!((normal, flagged), (vec![4], vec![]));
    }

    #[test]
    fn zero_delta_scores_like_global() {
        let g = ParamVector::from_slice(&[1.0, 2.0]);
        let m = msg(0, &[0.0, 0.0]);
        let score = |p: &ParamVector| Ok(p.values()[0] + p.values()[1]);
        let out = evaluate_submodels_with(&[&m], &g, 0.5, score).unwrap();
        assert_eq!(out, vec![(0, 3.0)]);
    }

    #[test]
    fn aggregate_normal_ignores_flagged() {
        let g = ParamVector::from_slice(&[0.0, 0.0]);
        let msgs = [msg(0, &[1.0, 0.0]), msg(1, &[0.0, 1.0]), msg(2, &[9.0, 9.0])];
        let refs: Vec<&UpdateMsg> = msgs.iter().collect();
        let out = aggregate_normal(&g, &refs, &[0, 1], 0.5).unwrap();
        assert_eq!(out.values(), &[0.25, 0.25]);
        assert!(aggregate_normal(&g, &refs, &[], 0.5).is_err());
    }

    #[test]
    fn screen_flags_worst_updates() {
        let g = ParamVector::from_slice(&[0.0]);
        let msgs: Vec<UpdateMsg> = (0..5).map(|k| msg(k, &[k as f64])).collect();
        let refs: Vec<&UpdateMsg> = msgs.iter().collect();
        let cfg = DetectionConfig {
            s_percent: 60.0,
            cadence: 1,
        };
        let (report, keep) = screen(3, &refs, &g, 0.0, &cfg, |p| Ok(p.values()[0])).unwrap();
        assert_eq!(report.normal, vec![2, 3, 4]);
        assert_eq!(report.flagged(), vec![0, 1]);
        assert_eq!(keep, vec![false, false, true, true, true]);
        assert_eq!(report.threshold, 2.0);
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;

/// A node's (clipped, perturbed, possibly sparse) update on its way to the cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateMsg {
    pub node_id: usize,
    pub delta: ParamVector,
    /// Global version the node's session started from.
    pub base_version: u64,
    pub send_time: f64,
    /// Local epochs in the session that produced this update.
    pub local_epochs: usize,
}

/// Summary of one message as recorded in metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsgSummary {
    pub node_id: usize,
    pub base_version: u64,
    pub staleness: u64,
}

/// `α·global + (1 − α)·incoming`.
pub fn aggregate_async(global: &ParamVector, incoming: &ParamVector, alpha: f64) -> Result<ParamVector> {
    global.check_layout(incoming)?;
    let mut out = global.scaled(alpha);
    out.axpy(1.0 - alpha, incoming)?;
    Ok(out)
}

/// Mix the mean of the node models `global + Δ_k` into `global`:
/// `α·global + (1 − α)·(1/m)·Σ_k (global + Δ_k)`.
///
/// Deltas arrive already clipped and perturbed on the node side, so the sum
/// of node-side noise plays the role of the cloud-side noise sum.
pub fn aggregate_aldp(global: &ParamVector, msgs: &[&UpdateMsg], alpha: f64) -> Result<ParamVector> {
    if msgs.is_empty() {
        return Err(Error::Empty("aggregation batch"));
    }
    let mut mean = global.zeros_like();
    for m in msgs {
        mean.axpy(1.0, &m.delta)?;
    }
    mean.scale(1.0 / msgs.len() as f64);
    let incoming = global.add(&mean)?;
    aggregate_async(global, &incoming, alpha)
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
    fn async_mixing() {
        let g = ParamVector::from_slice(&[1.0, 1.0]);
        let n = ParamVector::from_slice(&[3.0, 3.0]);
        assert_eq!(aggregate_async(&g, &n, 0.5).unwrap().values(), &[2.0, 2.0]);
        assert_eq!(aggregate_async(&g, &n, 1.0).unwrap(), g);
        assert_eq!(aggregate_async(&g, &n, 0.0).unwrap(), n);
        let bad = ParamVector::from_slice(&[1.0]);
        assert!(matches!(aggregate_async(&g, &bad, 0.5), Err(Error::LayoutMismatch)));
    }

    #[test]
    fn single_message_matches_async_rule() {
        let g = ParamVector::from_slice(&[0.5, -1.0]);
        let m = msg(0, &[0.25, 2.0]);
        let via_aldp = aggregate_aldp(&g, &[&m], 0.3).unwrap();
        let via_async = aggregate_async(&g, &g.add(&m.delta).unwrap(), 0.3).unwrap();
        assert_eq!(via_aldp, via_async);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let g = ParamVector::from_slice(&[0.5]);
        assert!(matches!(aggregate_aldp(&g, &[], 0.5), Err(Error::Empty(_))));
    }
}

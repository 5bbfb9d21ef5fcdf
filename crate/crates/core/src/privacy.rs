//! Node-side Gaussian mechanism: clipping, calibrated noise and a budget ledger.
//!
//! Sensitivity is tied to the clip norm: after clipping every update has L2
//! norm at most `S`, so `Δf = S`. Noise is drawn with standard deviation
//! `σ·S` where `σ` is the noise multiplier, which makes the calibrated
//! multiplier `sigma_for(ε, δ, 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::rng::Stream;

/// Relative tolerance when checking that an update was clipped.
const CLIP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    pub clip_norm: f64,
    /// Noise multiplier; per-coordinate standard deviation is `sigma * clip_norm`.
    pub sigma: f64,
}

impl PrivacyParams {
    /// Multiplier calibrated so that `(epsilon, delta)` holds with `Δf = clip_norm`.
    pub fn calibrated(epsilon: f64, delta: f64, clip_norm: f64) -> Result<Self> {
        if !(clip_norm > 0.0) {
            return Err(Error::domain("privacy.clip_norm", "must be positive"));
        }
        Ok(Self {
            epsilon,
            delta,
            clip_norm,
            sigma: sigma_for(epsilon, delta, 1.0)?,
        })
    }

    /// Explicit multiplier; `epsilon` is recomputed from it.
    pub fn with_sigma(sigma: f64, delta: f64, clip_norm: f64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::domain("privacy.sigma", "must be non-negative"));
        }
        if !(clip_norm > 0.0) {
            return Err(Error::domain("privacy.clip_norm", "must be positive"));
        }
        let epsilon = if sigma == 0.0 {
            f64::INFINITY
        } else {
            epsilon_for(sigma, delta, 1.0)?
        };
        Ok(Self {
            epsilon,
            delta,
            clip_norm,
            sigma,
        })
    }

    pub fn noise_std(&self) -> f64 {
        self.sigma * self.clip_norm
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain("privacy.delta", "must lie in (0, 1)"));
    }
    Ok(())
}

/// Gaussian-mechanism noise scale: `σ = (Δf/ε)·sqrt(2 ln(1.25/δ))`.
pub fn sigma_for(epsilon: f64, delta: f64, sensitivity: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::domain("privacy.epsilon", "must be positive and finite"));
    }
    check_delta(delta)?;
    if !(sensitivity > 0.0 && sensitivity.is_finite()) {
        return Err(Error::domain("privacy.sensitivity", "must be positive and finite"));
    }
    Ok(sensitivity / epsilon * (2.0 * (1.25 / delta).ln()).sqrt())
}

/// Inverse of [`sigma_for`]: the ε guaranteed by noise scale `sigma`.
pub fn epsilon_for(sigma: f64, delta: f64, sensitivity: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::domain("privacy.sigma", "must be positive and finite"));
    }
    check_delta(delta)?;
    if !(sensitivity > 0.0 && sensitivity.is_finite()) {
        return Err(Error::domain("privacy.sensitivity", "must be positive and finite"));
    }
    Ok(sensitivity / sigma * (2.0 * (1.25 / delta).ln()).sqrt())
}

/// Scale `g` by `1/ζ` with `ζ = max(1, ‖g‖₂/S)`.
pub fn clip(g: &ParamVector, clip_norm: f64) -> ParamVector {
    let norm = g.norm();
    let zeta = (norm / clip_norm).max(1.0);
    if zeta == 1.0 {
        g.clone()
    } else {
        g.scaled(1.0 / zeta)
    }
}

/// Add i.i.d. `N(0, (σS)²)` noise to every coordinate of an already clipped update.
pub fn perturb(g: &ParamVector, params: &PrivacyParams, rng: &mut Stream) -> Result<ParamVector> {
    let norm = g.norm();
    if norm > params.clip_norm * (1.0 + CLIP_TOLERANCE) {
        return Err(Error::Unclipped {
            norm,
            clip: params.clip_norm,
        });
    }
    let std = params.noise_std();
    let mut out = g.clone();
    for v in out.values_mut() {
        *v += std * rng.gaussian();
    }
    Ok(out)
}

/// Basic sequential composition of per-upload `(ε, δ)`.
///
/// Conservative stand-in for a moments accountant: totals add linearly. The
/// ledger only feeds reporting and never changes the noise that is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantState {
    pub rounds_composed: u64,
    pub per_round: (f64, f64),
    pub total: (f64, f64),
    pub num_nodes: usize,
    /// Set once the composed δ reaches `1/K`.
    pub delta_warning: bool,
}

impl AccountantState {
    pub fn new(num_nodes: usize) -> Self {
        Self {
            rounds_composed: 0,
            per_round: (0.0, 0.0),
            total: (0.0, 0.0),
            num_nodes,
            delta_warning: false,
        }
    }
}

pub fn account(state: &AccountantState, params: &PrivacyParams, rounds: u64) -> AccountantState {
    let mut next = state.clone();
    next.per_round = (params.epsilon, params.delta);
    next.rounds_composed += rounds;
    next.total.0 += rounds as f64 * params.epsilon;
    next.total.1 += rounds as f64 * params.delta;
    if state.num_nodes > 0 && next.total.1 >= 1.0 / state.num_nodes as f64 {
        next.delta_warning = true;
    }
    next
}

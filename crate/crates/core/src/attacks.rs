//! Adversaries: label-flipping nodes and gradient inversion.
//!
//! Inversion targets single-example gradients of the linear softmax model.
//! For that model the gradient of example `(x, y)` is `r xᵀ` for the weights
//! and `r` for the bias, with `r = softmax(Wx + b) − e_y`, so any row with a
//! non-negligible bias entry reveals `x` as a ratio.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{self, Dataset, Example, ModelKind, ModelSpec};
use crate::params::ParamVector;
use crate::privacy;
use crate::rng::{role, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    LabelFlip,
    GradientLeakage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionMethod {
    /// Weight-row over bias-entry ratio.
    ClosedForm,
    /// Projected gradient descent on the squared gradient mismatch.
    Matching,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeakageConfig {
    pub method: InversionMethod,
    pub match_iters: usize,
    pub step_size: f64,
    /// A reconstruction succeeds when its mean squared error is at most this.
    pub success_mse: f64,
    /// Bias-gradient entries at or below this magnitude are unusable.
    pub bias_floor: f64,
}

impl Default for LeakageConfig {
    fn default() -> Self {
        Self {
            method: InversionMethod::ClosedForm,
            match_iters: 500,
            step_size: 0.5,
            success_mse: 1e-2,
            bias_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub flip_from: usize,
    pub flip_to: usize,
    /// Exchange `flip_from` and `flip_to` instead of relabelling one way.
    pub swap: bool,
    pub malicious_fraction: f64,
    pub leakage: LeakageConfig,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::LabelFlip,
            flip_from: 1,
            flip_to: 7,
            swap: false,
            malicious_fraction: 0.3,
            leakage: LeakageConfig::default(),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.flip_from == self.flip_to {
            return Err(Error::domain("attack.flip_to", "must differ from flip_from"));
        }
        if !(0.0..1.0).contains(&self.malicious_fraction) {
            return Err(Error::domain("attack.malicious_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Apply this attack's relabelling to a node's data.
    pub fn poison(&self, data: &Dataset) -> Result<Dataset> {
        if self.swap {
            flip_label_map(data, &[(self.flip_from, self.flip_to), (self.flip_to, self.flip_from)])
        } else {
            flip_labels(data, self.flip_from, self.flip_to)
        }
    }
}

/// Relabel every `from` example as `to`.
pub fn flip_labels(data: &Dataset, from: usize, to: usize) -> Result<Dataset> {
    if from == to {
        return Err(Error::domain("attack.flip_to", "must differ from flip_from"));
    }
    flip_label_map(data, &[(from, to)])
}

/// Relabel through `map` in one pass, so `[(0, 1), (1, 0)]` swaps two classes.
pub fn flip_label_map(data: &Dataset, map: &[(usize, usize)]) -> Result<Dataset> {
    let examples = data
        .examples()
        .iter()
        .map(|e| {
            let label = map
                .iter()
                .find(|(from, _)| *from == e.label)
                .map_or(e.label, |(_, to)| *to);
            Example::new(e.input.clone(), label)
        })
        .collect();
    Dataset::new(examples)
}

/// `round(p·k)` distinct node ids, ascending.
pub fn choose_malicious(k: usize, p: f64, seed: u64) -> Vec<usize> {
    let count = ((p * k as f64).round() as usize).min(k);
    let mut stream = Stream::derive(seed, role::MALICIOUS, 0);
    let mut ids: Vec<usize> = (0..k).collect();
    for i in 0..count {
        let j = i + stream.below(k - i);
        ids.swap(i, j);
    }
    let mut chosen = ids[..count].to_vec();
    chosen.sort_unstable();
    chosen
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub target_index: usize,
    /// Empty when the attack could not produce a candidate.
    pub reconstructed_input: Vec<f64>,
    pub mse: f64,
    pub success: bool,
}

fn linear_parts<'a>(v: &'a ParamVector, spec: &ModelSpec) -> Result<(&'a [f64], &'a [f64])> {
    if spec.kind != ModelKind::LinearSoftmax {
        return Err(Error::domain("model.kind", "gradient inversion supports the linear softmax model only"));
    }
    if v.layout() != &spec.layout() {
        return Err(Error::LayoutMismatch);
    }
    Ok((v.segment("w").unwrap_or(&[]), v.segment("b").unwrap_or(&[])))
}

/// Reconstruct the input behind a single-example gradient.
///
/// Returns `Ok(None)` when no bias entry exceeds the floor.
pub fn invert_gradient(
    grad: &ParamVector,
    spec: &ModelSpec,
    model: &ParamVector,
    cfg: &LeakageConfig,
) -> Result<Option<Vec<f64>>> {
    let (gw, gb) = linear_parts(grad, spec)?;
    linear_parts(model, spec)?;
    let d = spec.input_dim;
    let mut best: Option<usize> = None;
    for (r, v) in gb.iter().enumerate() {
        if v.abs() > cfg.bias_floor && best.is_none_or(|b| v.abs() > gb[b].abs()) {
            best = Some(r);
        }
    }
    let Some(r) = best else { return Ok(None) };
    match cfg.method {
        InversionMethod::ClosedForm => Ok(Some(
            gw[r * d..(r + 1) * d]
                .iter()
                .map(|w| (w / gb[r]).clamp(0.0, 1.0))
                .collect(),
        )),
        InversionMethod::Matching => {
            // The true label is the only row with a negative bias gradient.
            let label = (0..gb.len())
                .min_by(|&a, &b| gb[a].total_cmp(&gb[b]))
                .unwrap_or(0);
            let mut x = vec![0.5; d];
            for _ in 0..cfg.match_iters {
                let (_, g) = match_objective(model, spec, grad, &x, label)?;
                for (xi, gi) in x.iter_mut().zip(&g) {
                    *xi = (*xi - cfg.step_size * gi).clamp(0.0, 1.0);
                }
            }
            Ok(Some(x))
        }
    }
}

/// Squared mismatch between the gradient that `(x, label)` would produce and
/// the observed `grad`, and its derivative with respect to `x`.
pub fn match_objective(
    model: &ParamVector,
    spec: &ModelSpec,
    grad: &ParamVector,
    x: &[f64],
    label: usize,
) -> Result<(f64, Vec<f64>)> {
    let (w, _) = linear_parts(model, spec)?;
    let (gw, gb) = linear_parts(grad, spec)?;
    let (d, c) = (spec.input_dim, spec.num_classes);
    let p = learner::softmax(&learner::logits(model, spec, x)?);
    let mut r = p.clone();
    r[label] -= 1.0;

    // R_W = r xᵀ − G_W, R_b = r − G_b
    let mut value = 0.0;
    let mut dx = vec![0.0; d];
    // u = R_W x + R_b, the coefficient multiplying dr/dx.
    let mut u = vec![0.0; c];
    for i in 0..c {
        let rb = r[i] - gb[i];
        value += rb * rb;
        u[i] = rb;
        for j in 0..d {
            let rw = r[i] * x[j] - gw[i * d + j];
            value += rw * rw;
            u[i] += rw * x[j];
            dx[j] += 2.0 * rw * r[i];
        }
    }
    // dr/dx = (diag(p) − p pᵀ) W
    let pu: f64 = p.iter().zip(&u).map(|(a, b)| a * b).sum();
    for m in 0..c {
        let jm = p[m] * (u[m] - pu);
        for k in 0..d {
            dx[k] += 2.0 * jm * w[m * d + k];
        }
    }
    Ok((value, dx))
}

/// Compare a reconstruction with the true input.
pub fn assess(target_index: usize, reconstructed: Option<Vec<f64>>, truth: &[f64], tau: f64) -> ReconstructionResult {
    match reconstructed {
        Some(x) => {
            let mse = x.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / truth.len().max(1) as f64;
            ReconstructionResult {
                target_index,
                reconstructed_input: x,
                mse,
                success: mse <= tau,
            }
        }
        None => ReconstructionResult {
            target_index,
            reconstructed_input: Vec::new(),
            mse: f64::INFINITY,
            success: false,
        },
    }
}

/// Fraction of successful reconstructions.
pub fn attack_success_rate(results: &[ReconstructionResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Empty("reconstruction results"));
    }
    Ok(results.iter().filter(|r| r.success).count() as f64 / results.len() as f64)
}

/// Outcome of one noise level in [`leakage_trials`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageLevel {
    pub sigma: f64,
    pub asr: f64,
    pub mean_mse: f64,
    pub results: Vec<ReconstructionResult>,
}

/// Attack `trials` clipped single-example gradients at every noise multiplier.
///
/// Trial `i` targets example `i mod n` and draws one standard-normal vector
/// `z_i`; the observed gradient at multiplier `σ` is `clip(g_i, S) + σ·S·z_i`,
/// so all levels see the same noise direction.
pub fn leakage_trials(
    spec: &ModelSpec,
    model: &ParamVector,
    targets: &Dataset,
    sigmas: &[f64],
    clip_norm: f64,
    trials: usize,
    seed: u64,
    cfg: &LeakageConfig,
) -> Result<Vec<LeakageLevel>> {
    if trials == 0 {
        return Err(Error::domain("leakage.trials", "must be at least 1"));
    }
    let mut clipped = Vec::with_capacity(trials);
    for i in 0..trials {
        let example = &targets.examples()[i % targets.len()];
        let g = learner::example_gradient(model, spec, example)?;
        let mut stream = Stream::derive(seed, role::LEAKAGE, i as u64);
        let z: Vec<f64> = (0..g.len()).map(|_| stream.gaussian()).collect();
        clipped.push((privacy::clip(&g, clip_norm), z));
    }
    sigmas
        .iter()
        .map(|&sigma| {
            let mut results = Vec::with_capacity(trials);
            for (i, (g, z)) in clipped.iter().enumerate() {
                let mut noisy = g.clone();
                for (v, zi) in noisy.values_mut().iter_mut().zip(z) {
                    *v += sigma * clip_norm * zi;
                }
                let truth = &targets.examples()[i % targets.len()].input;
                let x = invert_gradient(&noisy, spec, model, cfg)?;
                results.push(assess(i % targets.len(), x, truth, cfg.success_mse));
            }
            let asr = attack_success_rate(&results)?;
            let finite: Vec<f64> = results.iter().map(|r| r.mse).filter(|m| m.is_finite()).collect();
            let mean_mse = if finite.is_empty() {
                f64::INFINITY
            } else {
                finite.iter().sum::<f64>() / finite.len() as f64
            };
            Ok(LeakageLevel {
                sigma,
                asr,
                mean_mse,
                results,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        Dataset::new(
            (0..10)
                .map(|i| Example::new(vec![i as f64 / 10.0, 0.5], if i < 4 { 1 } else { i % 3 + 2 }))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn flip_moves_only_source_labels() {
        let data = toy();
        let flipped = flip_labels(&data, 1, 7).unwrap();
        assert_eq!(flipped.len(), data.len());
        let changed = data
            .examples()
            .iter()
            .zip(flipped.examples())
            .filter(|(a, b)| a.label != b.label)
            .count();
        assert_eq!(changed, 4);
        assert_eq!(flipped.label_counts(8)[7], data.label_counts(8)[7] + 4);
        assert!(flipped.filter_label(1).is_none());
        assert!(data.examples().iter().zip(flipped.examples()).all(|(a, b)| a.input == b.input));
        assert_eq!(flip_labels(&data, 5, 6).unwrap(), data);
        assert!(flip_labels(&data, 2, 2).is_err());
    }

    #[test]
    fn label_map_swaps_simultaneously() {
        let data = Dataset::new(vec![Example::new(vec![0.0], 0), Example::new(vec![1.0], 1)]).unwrap();
        let swapped = flip_label_map(&data, &[(0, 1), (1, 0)]).unwrap();
        let labels: Vec<usize> = swapped.examples().iter().map(|e| e.label).collect();
        assert_eq!(labels, vec![1, 0]);
    }

    #[test]
    fn malicious_choice_is_sized_and_seeded() {
        let a = choose_malicious(10, 0.3, 4);
        assert_eq!(a.len(), 3);
        assert_eq!(a, choose_malicious(10, 0.3, 4));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(choose_malicious(10, 0.0, 4).is_empty());
    }

    #[test]
    fn asr_counts() {
        let r = |s| ReconstructionResult {
            target_index: 0,
            reconstructed_input: vec![],
            mse: 0.0,
            success: s,
        };
        assert_eq!(attack_success_rate(&[r(true), r(true), r(true), r(false)]).unwrap(), 0.75);
        assert_eq!(attack_success_rate(&[r(false)]).unwrap(), 0.0);
        assert!(attack_success_rate(&[]).is_err());
    }

    #[test]
    fn zero_gradient_is_a_failed_attack() {
        let spec = ModelSpec::linear(3, 2, 1);
        let model = learner::init_model(&spec);
        let zero = model.zeros_like();
        let x = invert_gradient(&zero, &spec, &model, &LeakageConfig::default()).unwrap();
        assert!(x.is_none());
        assert!(!assess(0, x, &[0.1, 0.2, 0.3], 1e-2).success);
    }

    #[test]
    fn hidden_model_is_rejected() {
        let spec = ModelSpec::hidden(3, 2, 2, 1);
        let model = learner::init_model(&spec);
        assert!(invert_gradient(&model, &spec, &model, &LeakageConfig::default()).is_err());
    }
}

//! Convergence checks on strongly convex quadratics.
//!
//! The objective is `F(x) = ½ Σ a_i (x_i − ξ_i)²` with a diagonal spectrum
//! `a_i` spaced evenly over `[μ, L]`, so `F(ξ) = 0` and the excess loss of a
//! model is just its loss. Stochastic gradients add isotropic Gaussian
//! noise. The check is only meaningful here: strong convexity does not hold
//! for the classifiers.
//!
//! The theorem's mixing weight multiplies the *fresh* model, while the
//! simulator's `α` multiplies the current global model. A simulator run with
//! mixing weight `α_sim` is checked against the recurrence with
//! `α = 1 − α_sim`; plain averaging corresponds to `α = 1`.

use serde::{Deserialize, Serialize};

use crate::analysis::MetricsLog;
use crate::asyncsim::{TrainContext, TrainStreams, Workload};
use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::rng::{role, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticProblem {
    pub dim: usize,
    pub mu: f64,
    pub l: f64,
    /// Diagonal of the curvature matrix.
    pub curvature: Vec<f64>,
    pub optimum: Vec<f64>,
    /// Standard deviation of per-coordinate gradient noise.
    pub noise_std: f64,
}

impl QuadraticProblem {
    pub fn new(dim: usize, mu: f64, l: f64, noise_std: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("quadratic.dim", "must be positive"));
        }
        if !(mu > 0.0 && mu <= l && l.is_finite()) {
            return Err(Error::domain("quadratic.mu", "need 0 < mu <= L"));
        }
        if !(noise_std >= 0.0) {
            return Err(Error::domain("quadratic.noise_std", "must be non-negative"));
        }
        let curvature = (0..dim)
            .map(|i| {
                if dim == 1 {
                    mu
                } else {
                    mu + (l - mu) * i as f64 / (dim - 1) as f64
                }
            })
            .collect();
        let mut s = Stream::derive(seed, role::QUADRATIC, 0);
        let optimum = (0..dim).map(|_| s.gaussian()).collect();
        Ok(Self {
            dim,
            mu,
            l,
            curvature,
            optimum,
            noise_std,
        })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        0.5 * self
            .curvature
            .iter()
            .zip(x.iter().zip(&self.optimum))
            .map(|(a, (xi, oi))| a * (xi - oi) * (xi - oi))
            .sum::<f64>()
    }

    pub fn full_gradient(&self, x: &[f64]) -> Vec<f64> {
        self.curvature
            .iter()
            .zip(x.iter().zip(&self.optimum))
            .map(|(a, (xi, oi))| a * (xi - oi))
            .collect()
    }

    pub fn stochastic_gradient(&self, x: &[f64], stream: &mut Stream) -> Vec<f64> {
        let mut g = self.full_gradient(x);
        if self.noise_std > 0.0 {
            for v in &mut g {
                *v += self.noise_std * stream.gaussian();
            }
        }
        g
    }

    /// Excess loss after `steps` full-gradient steps of size `lambda` from `x0`.
    pub fn gd_gap(&self, x0: &[f64], lambda: f64, steps: usize) -> f64 {
        0.5 * self
            .curvature
            .iter()
            .zip(x0.iter().zip(&self.optimum))
            .map(|(a, (xi, oi))| a * (1.0 - lambda * a).powi(2 * steps as i32) * (xi - oi) * (xi - oi))
            .sum::<f64>()
    }
}

/// `nodes` identical copies of one quadratic; each local epoch is one gradient step.
#[derive(Debug, Clone)]
pub struct QuadraticWorkload {
    pub problem: QuadraticProblem,
    pub nodes: usize,
    pub start: Vec<f64>,
}

impl QuadraticWorkload {
    /// Starts every run from the origin.
    pub fn new(problem: QuadraticProblem, nodes: usize) -> Self {
        let start = vec![0.0; problem.dim];
        Self { problem, nodes, start }
    }
}

impl Workload for QuadraticWorkload {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn num_nodes(&self) -> usize {
        self.nodes
    }

    fn initial_model(&self) -> ParamVector {
        ParamVector::from_slice(&self.start)
    }

    fn train(
        &self,
        _node: usize,
        start: &ParamVector,
        ctx: &TrainContext,
        streams: &mut TrainStreams,
    ) -> Result<ParamVector> {
        let mut x = start.clone();
        for _ in 0..ctx.train.local_epochs {
            let g = self.problem.stochastic_gradient(x.values(), &mut streams.shuffle);
            for (xi, gi) in x.values_mut().iter_mut().zip(g) {
                *xi -= ctx.train.learning_rate * gi;
            }
            if let Some(std) = ctx.batch_noise_std {
                for xi in x.values_mut() {
                    *xi += std * streams.batch_noise.gaussian();
                }
            }
        }
        Ok(x)
    }

    fn loss(&self, model: &ParamVector) -> Result<f64> {
        if model.len() != self.problem.dim {
            return Err(Error::DimensionMismatch {
                context: "quadratic model",
                expected: self.problem.dim,
                found: model.len(),
            });
        }
        Ok(self.problem.value(model.values()))
    }

    fn accuracy(&self, _model: &ParamVector) -> Result<Option<f64>> {
        Ok(None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremParams {
    pub mu: f64,
    pub l: f64,
    pub lambda: f64,
    /// Weight on the fresh model.
    pub alpha: f64,
    pub nu_min: usize,
}

impl TheoremParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu <= self.l) {
            return Err(Error::domain("theorem.mu", "need 0 < mu <= L"));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0 / self.l) {
            return Err(Error::domain("theorem.lambda", "need 0 < lambda < 1/L"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::domain("theorem.alpha", "must lie in [0, 1]"));
        }
        if self.nu_min == 0 {
            return Err(Error::domain("theorem.nu_min", "must be at least 1"));
        }
        Ok(())
    }

    /// Per-epoch factor `1 − α + α(1 − μλ)`.
    pub fn rho(&self) -> f64 {
        1.0 - self.alpha + self.alpha * (1.0 - self.mu * self.lambda)
    }

    /// Per-aggregation factor `1 − α + α(1 − λμ)^ν_min`.
    pub fn rho_eff(&self) -> f64 {
        1.0 - self.alpha + self.alpha * (1.0 - self.mu * self.lambda).powi(self.nu_min as i32)
    }
}

/// `ρ^{T·ν_min}·gap₀ + (1 − ρ^{T·ν_min})·extra` with `ρ = 1 − α + α(1 − μλ)`.
pub fn theorem_bound(initial_gap: f64, params: &TheoremParams, rounds: usize, extra_error: f64) -> Result<f64> {
    params.validate()?;
    if !(initial_gap >= 0.0) || !(extra_error >= 0.0) {
        return Err(Error::domain("theorem.initial_gap", "gap and extra error must be non-negative"));
    }
    let decay = params.rho().powf((rounds * params.nu_min) as f64);
    Ok(decay * initial_gap + (1.0 - decay) * extra_error)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    /// Inflated bound on `E‖∇f(x; z) − ∇F(x)‖²`.
    pub v1: f64,
    /// Inflated bound on `E‖∇f(x; z)‖²`.
    pub v2: f64,
    pub v1_raw: f64,
    pub v2_raw: f64,
    pub inflation: f64,
    pub samples: usize,
}

pub const VARIANCE_INFLATION: f64 = 1.5;

/// Monte-Carlo second moments at each point; the maxima over points are reported.
pub fn estimate_variance_constants(
    problem: &QuadraticProblem,
    points: &[Vec<f64>],
    samples_per_point: usize,
    stream: &mut Stream,
) -> Result<VarianceEstimate> {
    if points.is_empty() || samples_per_point == 0 {
        return Err(Error::Empty("variance sample points"));
    }
    let (mut v1, mut v2) = (0.0f64, 0.0f64);
    for x in points {
        if x.len() != problem.dim {
            return Err(Error::DimensionMismatch {
                context: "variance sample point",
                expected: problem.dim,
                found: x.len(),
            });
        }
        let full = problem.full_gradient(x);
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..samples_per_point {
            let g = problem.stochastic_gradient(x, stream);
            for (gi, fi) in g.iter().zip(&full) {
                s1 += (gi - fi) * (gi - fi);
                s2 += gi * gi;
            }
        }
        v1 = v1.max(s1 / samples_per_point as f64);
        v2 = v2.max(s2 / samples_per_point as f64);
    }
    Ok(VarianceEstimate {
        v1: v1 * VARIANCE_INFLATION,
        v2: v2 * VARIANCE_INFLATION,
        v1_raw: v1,
        v2_raw: v2,
        inflation: VARIANCE_INFLATION,
        samples: points.len() * samples_per_point,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub mu: f64,
    pub l: f64,
    pub lambda: f64,
    /// Weight on the fresh model, i.e. `1 − α_sim` (or 1 for plain averaging).
    pub alpha: f64,
    pub slack: f64,
    pub variance: VarianceEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCheck {
    pub event_index: u64,
    pub gap_before: f64,
    pub gap_after: f64,
    /// `ρ_eff·gap_before + c`.
    pub bound: f64,
    pub pass: bool,
    /// Same check with `c = 0`.
    pub pass_tight: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub nu_min: usize,
    pub rho_eff: f64,
    pub c: f64,
    pub slack: f64,
    pub steps: Vec<StepCheck>,
    pub pass: bool,
    pub pass_tight: bool,
    /// `c / (1 − ρ_eff)`, the level the recurrence settles at.
    pub fixed_point: f64,
    pub final_gap: f64,
    pub below_fixed_point: bool,
    /// Largest observed per-epoch gap ratio, `(gap_{t+1}/gap_t)^{1/ν}`.
    pub worst_epoch_ratio: f64,
    pub note: String,
}

/// Check every aggregation of a quadratic run against
/// `gap_{t+1} ≤ ρ_eff·gap_t + c` with multiplicative slack.
pub fn check_convergence(log: &MetricsLog, cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    if log.workload != "quadratic" {
        return Err(Error::Config(format!(
            "convergence checks need a quadratic run, got `{}`",
            log.workload
        )));
    }
    let nu_min = log
        .rows
        .iter()
        .filter_map(|r| r.local_epochs)
        .min()
        .ok_or(Error::Empty("aggregation rows"))?;
    let params = TheoremParams {
        mu: cfg.mu,
        l: cfg.l,
        lambda: cfg.lambda,
        alpha: cfg.alpha,
        nu_min,
    };
    params.validate()?;
    let rho_eff = params.rho_eff();
    let c = cfg.alpha * (cfg.variance.v1 + cfg.variance.v2) / (2.0 * cfg.mu);

    let gaps: Vec<(u64, f64)> = log
        .rows
        .iter()
        .map(|r| {
            r.global_loss
                .map(|g| (r.event_index, g))
                .ok_or_else(|| Error::Config("every row of a convergence run needs a loss".into()))
        })
        .collect::<Result<_>>()?;
    let mut steps = Vec::with_capacity(gaps.len().saturating_sub(1));
    let mut worst_epoch_ratio = 0.0f64;
    for w in gaps.windows(2) {
        let ((_, before), (event_index, after)) = (w[0], w[1]);
        let tight = rho_eff * before;
        let bound = tight + c;
        if before > 0.0 {
            worst_epoch_ratio = worst_epoch_ratio.max((after / before).powf(1.0 / nu_min as f64));
        }
        steps.push(StepCheck {
            event_index,
            gap_before: before,
            gap_after: after,
            bound,
            pass: after <= bound * (1.0 + cfg.slack),
            pass_tight: after <= tight * (1.0 + cfg.slack),
        });
    }
    let final_gap = gaps.last().map_or(0.0, |g| g.1);
    let fixed_point = if rho_eff < 1.0 { c / (1.0 - rho_eff) } else { f64::INFINITY };
    Ok(ConvergenceReport {
        nu_min,
        rho_eff,
        c,
        slack: cfg.slack,
        pass: steps.iter().all(|s| s.pass),
        pass_tight: steps.iter().all(|s| s.pass_tight),
        below_fixed_point: final_gap <= fixed_point * (1.0 + cfg.slack) + f64::EPSILON,
        steps,
        fixed_point,
        final_gap,
        worst_epoch_ratio,
        note: "checked on a strongly convex quadratic; the classifiers do not satisfy the hypotheses".into(),
    })
}

/// Per-epoch behaviour of a plain-averaging run of identical deterministic nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdRateReport {
    /// `1 − λμ`.
    pub rate: f64,
    /// Largest `(gap_{t+1}/gap_t)^{1/ν}` over the run.
    pub worst_epoch_ratio: f64,
    /// Per-epoch contraction of the distance to the optimum over the last step.
    pub asymptotic_rate: f64,
    /// Largest relative gap error against closed-form gradient descent.
    pub closed_form_rel_err: f64,
    pub pass: bool,
}

/// Compare a plain-averaging quadratic run with gradient descent.
///
/// Passes when every epoch shrinks the gap by at most `(1 − λμ)(1 + slack)`,
/// the final per-epoch distance contraction is within `slack` of `1 − λμ`,
/// and the gaps agree with closed-form descent to `1e-9` relative.
pub fn check_gd_rate(
    log: &MetricsLog,
    problem: &QuadraticProblem,
    start: &[f64],
    lambda: f64,
    slack: f64,
) -> Result<GdRateReport> {
    if log.workload != "quadratic" {
        return Err(Error::Config(format!(
            "convergence checks need a quadratic run, got `{}`",
            log.workload
        )));
    }
    let nu = log
        .rows
        .iter()
        .filter_map(|r| r.local_epochs)
        .min()
        .ok_or(Error::Empty("aggregation rows"))?;
    let gaps: Vec<f64> = log
        .rows
        .iter()
        .map(|r| r.global_loss.ok_or_else(|| Error::Config("every row of a convergence run needs a loss".into())))
        .collect::<Result<_>>()?;
    if gaps.len() < 2 {
        return Err(Error::Empty("aggregation rows"));
    }
    let rate = 1.0 - lambda * problem.mu;
    let per_epoch = |a: f64, b: f64| (b / a).powf(1.0 / nu as f64);
    let worst_epoch_ratio = gaps
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| per_epoch(w[0], w[1]))
        .fold(0.0, f64::max);
    let n = gaps.len();
    let asymptotic_rate = per_epoch(gaps[n - 2], gaps[n - 1]).sqrt();
    let closed_form_rel_err = gaps
        .iter()
        .enumerate()
        .map(|(t, g)| {
            let want = problem.gd_gap(start, lambda, t * nu);
            (g - want).abs() / want.max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max);
    Ok(GdRateReport {
        rate,
        worst_epoch_ratio,
        asymptotic_rate,
        closed_form_rel_err,
        pass: worst_epoch_ratio <= rate * (1.0 + slack)
            && (asymptotic_rate - rate).abs() <= slack * rate
            && closed_form_rel_err <= 1e-9,
    })
}

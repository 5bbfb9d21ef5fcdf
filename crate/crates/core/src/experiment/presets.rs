use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{
    check_convergence, check_gd_rate, emit_metrics, estimate_variance_constants, ConvergenceConfig,
    ConvergenceReport, GdRateReport, MetricsFormat, MetricsLog, QuadraticProblem, QuadraticWorkload,
    VarianceEstimate,
};
use crate::asyncsim::{run_simulation, ClassifierWorkload, LocalPolicy, Mode, SimConfig, Workload};
use crate::attacks::{choose_malicious, leakage_trials, LeakageLevel};
use crate::data::provision;
use crate::detection::DetectionConfig;
use crate::error::Result;
use crate::learner::{self, ModelSpec, TrainConfig};
use crate::privacy::PrivacyParams;
use crate::rng::{role, Stream};

use super::config::{async_rounds, ExperimentConfig};
use super::Preset;

/// A named preset-internal assertion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool) -> Self {
        Self {
            name: name.into(),
            pass,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PresetOutcome {
    pub preset: Preset,
    pub summary: Value,
    pub checks: Vec<Check>,
    /// Metrics of every simulated cell, keyed by cell name.
    pub logs: Vec<(String, MetricsLog)>,
}

impl PresetOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// A classifier workload with poisoned shards on the malicious nodes.
#[derive(Debug, Clone)]
pub struct ClassifierSetup {
    pub workload: ClassifierWorkload,
    pub malicious: Vec<usize>,
}

/// Provision data for `nodes` nodes, pick `round(p·nodes)` attackers and poison their shards.
pub fn build_classifier(cfg: &ExperimentConfig, nodes: usize, p: f64, seed: u64) -> Result<ClassifierSetup> {
    let mut data = cfg.data.clone();
    data.seed = data.seed.wrapping_add(seed);
    let part = provision(&data, nodes)?;
    let malicious = choose_malicious(nodes, p, seed);
    let shards = part
        .shards
        .into_iter()
        .enumerate()
        .map(|(k, shard)| {
            if malicious.contains(&k) {
                cfg.attack.poison(&shard)
            } else {
                Ok(shard)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut spec = cfg.model_spec()?;
    spec.input_dim = part.test.dim();
    spec.seed = cfg.model.seed.unwrap_or(seed);
    Ok(ClassifierSetup {
        workload: ClassifierWorkload::new(spec, shards, part.test)?,
        malicious,
    })
}

fn seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.repeats as u64).map(|r| cfg.seed.wrapping_add(r)).collect()
}

fn cell_summary(name: &str, log: &MetricsLog) -> Value {
    let last = log.last();
    json!({
        "cell": name,
        "seed": log.seed,
        "final_accuracy": log.final_accuracy(),
        "final_loss": last.and_then(|r| r.global_loss),
        "kappa": log.final_kappa(),
        "makespan": log.makespan,
        "comm_time": last.map(|r| r.comm_time_cum),
        "comp_time": last.map(|r| r.comp_time_cum),
        "wait_time": last.map(|r| r.wait_time_cum),
        "epsilon_total": last.map(|r| r.epsilon_total),
        "delta_total": last.map(|r| r.delta_total),
        "delta_warning": log.delta_warning,
        "aggregations": last.map(|r| r.event_index),
    })
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn write_outputs(out: Option<&Path>, outcome: &PresetOutcome, format: MetricsFormat) -> Result<()> {
    let Some(out) = out else { return Ok(()) };
    let root = out.join(outcome.preset.name());
    fs::create_dir_all(&root)?;
    let file = match format {
        MetricsFormat::Csv => "metrics.csv",
        MetricsFormat::JsonLines => "metrics.jsonl",
    };
    for (cell, log) in &outcome.logs {
        let dir = root.join(cell);
        fs::create_dir_all(&dir)?;
        emit_metrics(log, dir.join(file), format)?;
    }
    let mut text = serde_json::to_string_pretty(&json!({
        "preset": outcome.preset.name(),
        "pass": outcome.passed(),
        "checks": outcome.checks,
        "summary": outcome.summary,
    }))?;
    text.push('\n');
    fs::write(root.join("summary.json"), text)?;
    Ok(())
}

/// Run `preset` and, when `out` is given, write its metrics and summary below it.
pub fn run_preset(preset: Preset, cfg: &ExperimentConfig, out: Option<&Path>) -> Result<PresetOutcome> {
    cfg.validate()?;
    let outcome = match preset {
        Preset::BaselineCompare => baseline_compare(cfg)?,
        Preset::DetectionSweep => detection_sweep(cfg)?,
        Preset::PrivacySweep => privacy_sweep(cfg)?,
        Preset::LeakageEval => leakage_eval(cfg, out)?,
        Preset::ConvergenceCheck => convergence_check(cfg)?,
    };
    write_outputs(out, &outcome, cfg.output.format)?;
    Ok(outcome)
}

struct Cell {
    name: String,
    sim: SimConfig,
    detection: DetectionConfig,
    setup: usize,
}

fn run_cells(cells: &[Cell], setups: &[ClassifierSetup]) -> Result<Vec<MetricsLog>> {
    cells
        .par_iter()
        .map(|c| {
            let setup = &setups[c.setup];
            run_simulation(&c.sim, &setup.workload, &setup.malicious, &c.detection).map(|o| o.log)
        })
        .collect()
}

fn baseline_compare(cfg: &ExperimentConfig) -> Result<PresetOutcome> {
    let k = cfg.sim.nodes;
    let seeds = seeds(cfg);
    let setups = seeds
        .par_iter()
        .map(|&s| build_classifier(cfg, k, 0.0, s))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for (i, &seed) in seeds.iter().enumerate() {
        for mode in [Mode::Sync, Mode::Async] {
            for ldp in [false, true] {
                let mut sim = cfg.sim_config(seed)?;
                sim.mode = mode;
                sim.ldp = ldp;
                sim.detection = false;
                sim.malicious_fraction = 0.0;
                sim.rounds = async_rounds(&sim, cfg.sim.rounds);
                let mode_name = if mode == Mode::Sync { "sync" } else { "async" };
                let ldp_name = if ldp { "ldp" } else { "noldp" };
                cells.push(Cell {
                    name: format!("{mode_name}-{ldp_name}-seed{seed}"),
                    sim,
                    detection: cfg.detection,
                    setup: i,
                });
            }
        }
    }
    let logs = run_cells(&cells, &setups)?;
    let mut checks = Vec::new();
    for (i, &seed) in seeds.iter().enumerate() {
        for (j, ldp_name) in ["noldp", "ldp"].iter().enumerate() {
            let sync = &logs[4 * i + j];
            let asyn = &logs[4 * i + 2 + j];
            checks.push(Check::new(
                format!("seed{seed}-{ldp_name}: async kappa >= sync kappa"),
                asyn.final_kappa().unwrap_or(0.0) >= sync.final_kappa().unwrap_or(f64::INFINITY),
            ));
            checks.push(Check::new(
                format!("seed{seed}-{ldp_name}: async makespan < sync makespan"),
                asyn.makespan < sync.makespan,
            ));
        }
    }
    let summary = json!({
        "cells": cells.iter().zip(&logs).map(|(c, l)| {
            let mut v = cell_summary(&c.name, l);
            v["mode"] = json!(c.sim.mode);
            v["ldp"] = json!(c.sim.ldp);
            v
        }).collect::<Vec<_>>(),
    });
    Ok(PresetOutcome {
        preset: Preset::BaselineCompare,
        summary,
        checks,
        logs: cells.into_iter().map(|c| c.name).zip(logs).collect(),
    })
}

fn flagged_union(log: &MetricsLog) -> Vec<usize> {
    let mut ids: Vec<usize> = log.detection_reports.iter().flat_map(|r| r.flagged()).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn detection_sweep(cfg: &ExperimentConfig) -> Result<PresetOutcome> {
    let k = cfg.sim.nodes;
    let seeds = seeds(cfg);
    let combos: Vec<(f64, u64)> = cfg
        .sweep
        .p_values
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let setups = combos
        .par_iter()
        .map(|&(p, s)| build_classifier(cfg, k, p, s))
        .collect::<Result<Vec<_>>>()?;
    let pct = |p: f64| (p * 100.0).round() as u64;
    let mut cells = Vec::new();
    for (i, &(p, seed)) in combos.iter().enumerate() {
        let mut base = cfg.sim_config(seed)?;
        base.malicious_fraction = p;
        base.detection = false;
        // Same K-arrival batches as the screened cells, so screening is the only difference.
        base.buffer_size = base.nodes;
        base.rounds = async_rounds(&base, cfg.sim.rounds);
        cells.push(Cell {
            name: format!("p{}-none-seed{seed}", pct(p)),
            sim: base,
            detection: cfg.detection,
            setup: i,
        });
        for &s in &cfg.sweep.s_values {
            let mut sim = cfg.sim_config(seed)?;
            sim.malicious_fraction = p;
            sim.detection = true;
            sim.rounds = async_rounds(&sim, cfg.sim.rounds);
            cells.push(Cell {
                name: format!("p{}-s{}-seed{seed}", pct(p), s),
                sim,
                detection: DetectionConfig {
                    s_percent: s,
                    ..cfg.detection
                },
                setup: i,
            });
        }
    }
    let logs = run_cells(&cells, &setups)?;

    let mut grid = Vec::new();
    let mut baselines = Vec::new();
    for &p in &cfg.sweep.p_values {
        let runs = |s: Option<f64>| {
            cells
                .iter()
                .zip(&logs)
                .filter(move |(c, _)| {
                    c.sim.malicious_fraction == p
                        && match s {
                            None => !c.sim.detection,
                            Some(s) => c.sim.detection && c.detection.s_percent == s,
                        }
                })
                .map(|(c, l)| (&setups[c.setup], l))
                .collect::<Vec<_>>()
        };
        let base = runs(None);
        baselines.push(json!({
            "p": p,
            "mean_final_accuracy": mean(base.iter().filter_map(|(_, l)| l.final_accuracy())),
            "seeds": base.len(),
        }));
        for &s in &cfg.sweep.s_values {
            let rs = runs(Some(s));
            let caught: Vec<bool> = rs
                .iter()
                .map(|(setup, l)| {
                    let flagged = flagged_union(l);
                    setup.malicious.iter().all(|m| flagged.contains(m))
                })
                .collect();
            grid.push(json!({
                "s": s,
                "p": p,
                "mean_final_accuracy": mean(rs.iter().filter_map(|(_, l)| l.final_accuracy())),
                "all_malicious_flagged_rate": mean(caught.iter().map(|&c| if c { 1.0 } else { 0.0 })),
                "seeds": rs.len(),
            }));
        }
    }
    let summary = json!({
        "cells": grid,
        "baselines": baselines,
        "runs": cells.iter().zip(&logs).map(|(c, l)| {
            let mut v = cell_summary(&c.name, l);
            v["p"] = json!(c.sim.malicious_fraction);
            v["s"] = json!(c.sim.detection.then_some(c.detection.s_percent));
            v["malicious"] = json!(setups[c.setup].malicious);
            v["flagged"] = json!(flagged_union(l));
            v
        }).collect::<Vec<_>>(),
    });
    Ok(PresetOutcome {
        preset: Preset::DetectionSweep,
        summary,
        checks: Vec::new(),
        logs: cells.into_iter().map(|c| c.name).zip(logs).collect(),
    })
}

/// Linear model and targets used for inversion trials.
fn leakage_target(cfg: &ExperimentConfig, seed: u64) -> Result<(ModelSpec, ClassifierWorkload)> {
    let setup = build_classifier(cfg, cfg.sim.nodes, 0.0, seed)?;
    let w = setup.workload;
    let spec = ModelSpec::linear(w.spec.input_dim, w.spec.num_classes, w.spec.seed);
    Ok((spec, w))
}

fn run_leakage(cfg: &ExperimentConfig, sigmas: &[f64], seed: u64) -> Result<Vec<LeakageLevel>> {
    let (spec, w) = leakage_target(cfg, seed)?;
    let model = learner::init_model(&spec);
    leakage_trials(
        &spec,
        &model,
        &w.test,
        sigmas,
        cfg.privacy.clip_norm,
        cfg.leakage.trials,
        seed,
        &cfg.attack.leakage,
    )
}

fn privacy_sweep(cfg: &ExperimentConfig) -> Result<PresetOutcome> {
    let k = cfg.sim.nodes;
    let seeds = seeds(cfg);
    let setups = seeds
        .par_iter()
        .map(|&s| build_classifier(cfg, k, 0.0, s))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for (i, &seed) in seeds.iter().enumerate() {
        for &sigma in &cfg.sweep.sigmas {
            let mut sim = cfg.sim_config(seed)?;
            sim.ldp = true;
            sim.detection = false;
            sim.malicious_fraction = 0.0;
            sim.privacy = PrivacyParams::with_sigma(sigma, cfg.privacy.delta, cfg.privacy.clip_norm)?;
            sim.rounds = async_rounds(&sim, cfg.sim.rounds);
            cells.push(Cell {
                name: format!("sigma{sigma}-seed{seed}"),
                sim,
                detection: cfg.detection,
                setup: i,
            });
        }
    }
    let mut logs = run_cells(&cells, &setups)?;
    let leakage = seeds
        .par_iter()
        .map(|&s| run_leakage(cfg, &cfg.sweep.sigmas, s))
        .collect::<Result<Vec<_>>>()?;
    let n_sigma = cfg.sweep.sigmas.len();
    for (idx, log) in logs.iter_mut().enumerate() {
        let level = &leakage[idx / n_sigma][idx % n_sigma];
        if let Some(row) = log.rows.last_mut() {
            row.asr = Some(level.asr);
        }
    }
    let mut checks = Vec::new();
    let mut order: Vec<usize> = (0..n_sigma).collect();
    order.sort_by(|&a, &b| cfg.sweep.sigmas[a].total_cmp(&cfg.sweep.sigmas[b]));
    let mean_asr: Vec<f64> = (0..n_sigma)
        .map(|j| mean(leakage.iter().map(|l| l[j].asr)).unwrap_or(0.0))
        .collect();
    checks.push(Check::new(
        "mean ASR is nonincreasing in sigma",
        order.windows(2).all(|w| mean_asr[w[1]] <= mean_asr[w[0]]),
    ));
    let summary = json!({
        "levels": (0..n_sigma).map(|j| {
            let sigma = cfg.sweep.sigmas[j];
            let eps = if sigma > 0.0 {
                crate::privacy::epsilon_for(sigma, cfg.privacy.delta, 1.0).ok()
            } else {
                None
            };
            json!({
                "sigma": sigma,
                "epsilon_per_upload": eps,
                "mean_asr": mean_asr[j],
                "mean_final_accuracy": mean(logs.iter().skip(j).step_by(n_sigma).filter_map(|l| l.final_accuracy())),
            })
        }).collect::<Vec<_>>(),
        "runs": cells.iter().zip(&logs).map(|(c, l)| cell_summary(&c.name, l)).collect::<Vec<_>>(),
    });
    Ok(PresetOutcome {
        preset: Preset::PrivacySweep,
        summary,
        checks,
        logs: cells.into_iter().map(|c| c.name).zip(logs).collect(),
    })
}

fn leakage_eval(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<PresetOutcome> {
    let calibrated = cfg.privacy.resolve()?.sigma;
    let sigmas = [0.0, calibrated];
    let seed = cfg.seed;
    let levels = run_leakage(cfg, &sigmas, seed)?;
    if let Some(out) = out {
        for level in &levels {
            let dir = out.join(Preset::LeakageEval.name()).join(format!("sigma{}-seed{seed}", level.sigma));
            fs::create_dir_all(&dir)?;
            let mut w = csv::Writer::from_path(dir.join("trials.csv"))?;
            w.write_record(["target_index", "mse", "success"])?;
            for r in &level.results {
                w.write_record([r.target_index.to_string(), r.mse.to_string(), r.success.to_string()])?;
            }
            w.flush()?;
        }
    }
    let max_mse = |l: &LeakageLevel| l.results.iter().map(|r| r.mse).fold(0.0, f64::max);
    let checks = vec![
        Check::new("noiseless inversion is exact (max mse < 1e-8)", max_mse(&levels[0]) < 1e-8),
        Check::new("calibrated noise keeps ASR below 5%", levels[1].asr < 0.05),
    ];
    let summary = json!({
        "seed": seed,
        "trials": cfg.leakage.trials,
        "success_mse": cfg.attack.leakage.success_mse,
        "levels": levels.iter().map(|l| json!({
            "sigma": l.sigma,
            "asr": l.asr,
            "mean_mse": l.mean_mse,
            "max_mse": max_mse(l),
        })).collect::<Vec<_>>(),
    });
    Ok(PresetOutcome {
        preset: Preset::LeakageEval,
        summary,
        checks,
        logs: Vec::new(),
    })
}

/// Both quadratic runs for one seed and their checks.
#[derive(Debug, Clone)]
pub struct ConvergenceTrial {
    pub seed: u64,
    pub problem: QuadraticProblem,
    pub variance: VarianceEstimate,
    pub mixed: ConvergenceReport,
    pub plain: GdRateReport,
    pub mixed_log: MetricsLog,
    pub plain_log: MetricsLog,
}

/// Synchronous, noise-free runs on one seeded quadratic: one with the
/// configured mixing weight and one with plain averaging.
pub fn convergence_trial(cfg: &ExperimentConfig, seed: u64) -> Result<ConvergenceTrial> {
    let c = &cfg.convergence;
    let problem = QuadraticProblem::new(c.dim, c.mu, c.l, c.noise_std, seed)?;
    let workload = QuadraticWorkload::new(problem.clone(), c.nodes);
    let mixed_cfg = SimConfig {
        nodes: c.nodes,
        malicious_fraction: 0.0,
        alpha: c.alpha,
        plain_average: false,
        mode: Mode::Sync,
        ldp: false,
        per_batch_noise: false,
        detection: false,
        topk_ratio: 1.0,
        rounds: c.rounds,
        buffer_size: 1,
        local_policy: LocalPolicy::Refresh,
        eval_every: 1,
        privacy: cfg.privacy.resolve()?,
        train: TrainConfig {
            learning_rate: c.lambda,
            batch_size: 1,
            local_epochs: c.local_epochs,
        },
        timing: cfg.timing,
        seed,
    };
    let plain_cfg = SimConfig {
        plain_average: true,
        rounds: c.gd_rounds,
        ..mixed_cfg.clone()
    };
    let detection = DetectionConfig::default();
    let mixed_log = run_simulation(&mixed_cfg, &workload, &[], &detection)?.log;
    let plain_log = run_simulation(&plain_cfg, &workload, &[], &detection)?.log;

    let start = workload.initial_model().into_values();
    let mut stream = Stream::derive(seed, role::QUADRATIC, 1);
    let samples = if c.noise_std > 0.0 { 10_000 } else { 1 };
    let variance = estimate_variance_constants(&problem, &[start.clone(), problem.optimum.clone()], samples, &mut stream)?;
    let mixed = check_convergence(
        &mixed_log,
        &ConvergenceConfig {
            mu: c.mu,
            l: c.l,
            lambda: c.lambda,
            alpha: 1.0 - c.alpha,
            slack: c.slack,
            variance,
        },
    )?;
    let plain = check_gd_rate(&plain_log, &problem, &start, c.lambda, c.slack)?;
    Ok(ConvergenceTrial {
        seed,
        problem,
        variance,
        mixed,
        plain,
        mixed_log,
        plain_log,
    })
}

fn convergence_check(cfg: &ExperimentConfig) -> Result<PresetOutcome> {
    let seeds: Vec<u64> = (0..cfg.convergence.seeds as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let trials = seeds
        .par_iter()
        .map(|&s| convergence_trial(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let mut checks = Vec::new();
    let mut logs = Vec::new();
    for t in &trials {
        checks.push(Check::new(format!("seed{}: mixed run contracts", t.seed), t.mixed.pass && t.mixed.pass_tight));
        checks.push(Check::new(format!("seed{}: plain run matches descent rate", t.seed), t.plain.pass));
        logs.push((format!("mixed-seed{}", t.seed), t.mixed_log.clone()));
        logs.push((format!("plain-seed{}", t.seed), t.plain_log.clone()));
    }
    let pass = checks.iter().all(|c| c.pass);
    let summary = json!({
        "pass": pass,
        "seeds": trials.len(),
        "trials": trials.iter().map(|t| json!({
            "seed": t.seed,
            "rho_eff": t.mixed.rho_eff,
            "c": t.mixed.c,
            "nu_min": t.mixed.nu_min,
            "pass": t.mixed.pass,
            "pass_tight": t.mixed.pass_tight,
            "final_gap": t.mixed.final_gap,
            "below_fixed_point": t.mixed.below_fixed_point,
            "worst_step_ratio": t.mixed.worst_epoch_ratio,
            "variance": t.variance,
            "plain": t.plain,
        })).collect::<Vec<_>>(),
        "note": "checked on strongly convex quadratics only",
    });
    Ok(PresetOutcome {
        preset: Preset::ConvergenceCheck,
        summary,
        checks,
        logs,
    })
}

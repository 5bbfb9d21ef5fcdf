//! Independent reference computations checked against the library.

use asyncfl::asyncsim::{aggregate_aldp, UpdateMsg};
use asyncfl::attacks::{invert_gradient, match_objective, InversionMethod, LeakageConfig};
use asyncfl::detection::{aggregate_normal, detect, screen, threshold_topk, DetectionConfig};
use asyncfl::learner::{self, Dataset, Example, ModelSpec};
use asyncfl::privacy::{self, PrivacyParams};
use asyncfl::rng::Stream;
use asyncfl::ParamVector;

fn random_example(stream: &mut Stream, d: usize, c: usize) -> Example {
    Example::new((0..d).map(|_| stream.uniform()).collect(), stream.below(c))
}

fn random_model(spec: &ModelSpec, stream: &mut Stream) -> ParamVector {
    let mut m = learner::init_model(spec);
    for v in m.values_mut() {
        *v += stream.normal(0.0, 0.3);
    }
    m
}

/// Central differences of the mean cross-entropy against the analytic gradient.
fn check_gradient(spec: &ModelSpec, cases: usize, seed: u64) {
    let mut stream = Stream::from_seed(seed);
    let h = 1e-6;
    for case in 0..cases {
        let model = random_model(spec, &mut stream);
        let batch = Dataset::new(
            (0..1 + case % 4)
                .map(|_| random_example(&mut stream, spec.input_dim, spec.num_classes))
                .collect(),
        )
        .unwrap();
        let grad = learner::gradient(&model, spec, &batch).unwrap();
        for i in 0..model.len() {
            let mut plus = model.clone();
            plus.values_mut()[i] += h;
            let mut minus = model.clone();
            minus.values_mut()[i] -= h;
            let fd = (learner::loss(&plus, spec, &batch).unwrap() - learner::loss(&minus, spec, &batch).unwrap())
                / (2.0 * h);
            let an = grad.values()[i];
            let err = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-6);
            assert!(err < 1e-4, "case {case} coord {i}: fd {fd} vs analytic {an}");
        }
    }
}

#[test]
fn linear_gradient_matches_finite_differences() {
    check_gradient(&ModelSpec::linear(6, 4, 1), 100, 21);
}

#[test]
fn hidden_layer_gradient_matches_finite_differences() {
    check_gradient(&ModelSpec::hidden(5, 7, 3, 2), 100, 22);
}

#[test]
fn match_objective_derivative_matches_finite_differences() {
    let spec = ModelSpec::linear(8, 5, 3);
    let mut stream = Stream::from_seed(23);
    let h = 1e-6;
    for _ in 0..100 {
        let model = random_model(&spec, &mut stream);
        let target = random_example(&mut stream, 8, 5);
        let grad = learner::example_gradient(&model, &spec, &target).unwrap();
        let x: Vec<f64> = (0..8).map(|_| stream.uniform()).collect();
        let label = stream.below(5);
        let (_, dx) = match_objective(&model, &spec, &grad, &x, label).unwrap();
        for j in 0..8 {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fd = (match_objective(&model, &spec, &grad, &xp, label).unwrap().0
                - match_objective(&model, &spec, &grad, &xm, label).unwrap().0)
                / (2.0 * h);
            let err = (fd - dx[j]).abs() / (fd.abs() + dx[j].abs()).max(1e-6);
            assert!(err < 1e-4, "coord {j}: fd {fd} vs analytic {}", dx[j]);
        }
    }
}

#[test]
fn closed_form_inversion_recovers_inputs() {
    let spec = ModelSpec::linear(12, 4, 5);
    let model = learner::init_model(&spec);
    let mut stream = Stream::from_seed(24);
    let cfg = LeakageConfig::default();
    for _ in 0..50 {
        let e = random_example(&mut stream, 12, 4);
        let grad = learner::example_gradient(&model, &spec, &e).unwrap();
        let x = invert_gradient(&grad, &spec, &model, &cfg).unwrap().unwrap();
        let mse = x.iter().zip(&e.input).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 12.0;
        assert!(mse < 1e-20, "mse {mse}");
    }
}

#[test]
fn matching_inversion_gets_close_without_noise() {
    let spec = ModelSpec::linear(6, 3, 6);
    let model = learner::init_model(&spec);
    let mut stream = Stream::from_seed(25);
    let cfg = LeakageConfig {
        method: InversionMethod::Matching,
        match_iters: 3000,
        ..LeakageConfig::default()
    };
    let e = random_example(&mut stream, 6, 3);
    let grad = learner::example_gradient(&model, &spec, &e).unwrap();
    let x = invert_gradient(&grad, &spec, &model, &cfg).unwrap().unwrap();
    let mse = x.iter().zip(&e.input).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 6.0;
    assert!(mse < cfg.success_mse, "mse {mse}");
}

#[test]
fn perturbation_moments() {
    let params = PrivacyParams::calibrated(4.0, 1e-5, 0.5).unwrap();
    let n = 200_000;
    let base = ParamVector::from_slice(&vec![0.25; n].iter().map(|v| v / (n as f64).sqrt()).collect::<Vec<_>>());
    let noisy = privacy::perturb(&base, &params, &mut Stream::from_seed(26)).unwrap();
    let noise: Vec<f64> = noisy.values().iter().zip(base.values()).map(|(a, b)| a - b).collect();
    let mean = noise.iter().sum::<f64>() / n as f64;
    let var = noise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let target = params.sigma * params.clip_norm;
    assert!(mean.abs() < 5.0 * target / (n as f64).sqrt(), "mean {mean}");
    assert!((var.sqrt() / target - 1.0).abs() < 0.01);
    // Lag-one autocorrelation of the noise sequence.
    let lag: f64 = noise.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / ((n - 1) as f64 * var);
    assert!(lag.abs() < 0.01, "lag-one correlation {lag}");
}

#[test]
fn perturb_rejects_unclipped_input() {
    let params = PrivacyParams::calibrated(8.0, 1e-3, 1.0).unwrap();
    let g = ParamVector::from_slice(&[3.0, 4.0]);
    assert!(privacy::perturb(&g, &params, &mut Stream::from_seed(1)).is_err());
    assert!(privacy::perturb(&privacy::clip(&g, 1.0), &params, &mut Stream::from_seed(1)).is_ok());
}

#[test]
fn node_side_noise_averages_like_cloud_noise() {
    // K nodes each add N(0, (σS)²); the mixed global moves by (1 − α) times
    // their mean, so per coordinate the noise std is (1 − α)·σS/√K.
    let params = PrivacyParams::calibrated(8.0, 1e-3, 1.0).unwrap();
    let (k, d, alpha) = (10usize, 50_000usize, 0.3);
    let zero = ParamVector::from_slice(&vec![0.0; d]);
    let msgs: Vec<UpdateMsg> = (0..k)
        .map(|node| UpdateMsg {
            node_id: node,
            delta: privacy::perturb(&zero, &params, &mut Stream::derive(27, "ldp", node as u64)).unwrap(),
            base_version: 0,
            send_time: 0.0,
            local_epochs: 1,
        })
        .collect();
    let refs: Vec<&UpdateMsg> = msgs.iter().collect();
    let out = aggregate_aldp(&zero, &refs, alpha).unwrap();
    let std = (out.values().iter().map(|v| v * v).sum::<f64>() / d as f64).sqrt();
    let want = (1.0 - alpha) * params.sigma / (k as f64).sqrt();
    assert!((std / want - 1.0).abs() < 0.02, "std {std} vs {want}");
}

#[test]
fn accountant_composes_linearly() {
    let params = PrivacyParams::calibrated(2.0, 1e-4, 1.0).unwrap();
    let mut state = privacy::AccountantState::new(10);
    for _ in 0..7 {
        state = privacy::account(&state, &params, 1);
    }
    assert_eq!(state.rounds_composed, 7);
    assert!((state.total.0 - 14.0).abs() < 1e-12);
    assert!((state.total.1 - 7e-4).abs() < 1e-15);
    assert!(!state.delta_warning);
    let state = privacy::account(&state, &params, 1000);
    assert!(state.delta_warning);
}

#[test]
fn threshold_worked_example() {
    let accs = [0.9, 0.85, 0.8, 0.2];
    let thr = threshold_topk(&accs, 50.0).unwrap();
    assert_eq!(thr, 0.85);
    let scores: Vec<(usize, f64)> = accs.iter().copied().enumerate().collect();
    assert_eq!(detect(&scores, thr), (vec![0, 1], vec![2, 3]));
    // 80% of ten nodes keeps eight.
    let ten: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
    assert_eq!(threshold_topk(&ten, 80.0).unwrap(), 0.2);
}

fn msgs_for(deltas: &[Vec<f64>]) -> Vec<UpdateMsg> {
    deltas
        .iter()
        .enumerate()
        .map(|(k, d)| UpdateMsg {
            node_id: k,
            delta: ParamVector::from_slice(d),
            base_version: 0,
            send_time: 0.0,
            local_epochs: 1,
        })
        .collect()
}

#[test]
fn screening_by_hand() {
    // Score = first coordinate of the sub-model, so the reference is easy to
    // recompute: sub = g + (1 − α)·Δ.
    let g = ParamVector::from_slice(&[1.0, 0.0]);
    let deltas = vec![vec![0.4, 1.0], vec![-2.0, 1.0], vec![0.2, 1.0], vec![1.0, 1.0], vec![-0.5, 1.0]];
    let msgs = msgs_for(&deltas);
    let refs: Vec<&UpdateMsg> = msgs.iter().collect();
    let alpha = 0.5;
    let cfg = DetectionConfig {
        s_percent: 60.0,
        cadence: 1,
    };
    let (report, keep) = screen(3, &refs, &g, alpha, &cfg, |m| Ok(m.values()[0])).unwrap();
    let scores: Vec<f64> = deltas.iter().map(|d| 1.0 + 0.5 * d[0]).collect();
    let mut sorted = scores.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    assert_eq!(report.threshold, sorted[2]);
    assert_eq!(keep, vec![true, false, true, true, false]);
    assert_eq!(report.flagged(), vec![1, 4]);
    assert_eq!(report.normal, vec![0, 2, 3]);

    let kept: Vec<&UpdateMsg> = refs.iter().zip(&keep).filter(|(_, k)| **k).map(|(m, _)| *m).collect();
    let direct = aggregate_aldp(&g, &kept, alpha).unwrap();
    assert_eq!(aggregate_normal(&g, &refs, &report.normal, alpha).unwrap(), direct);

    // Replacing flagged deltas with zeros does not change what the kept ones produce.
    let mut zeroed = deltas.clone();
    for k in report.flagged() {
        zeroed[k] = vec![0.0, 0.0];
    }
    let zmsgs = msgs_for(&zeroed);
    let zrefs: Vec<&UpdateMsg> = zmsgs.iter().collect();
    assert_eq!(aggregate_normal(&g, &zrefs, &report.normal, alpha).unwrap(), direct);
    let mean0 = (0.4 + 0.2 + 1.0) / 3.0;
    assert!((direct.values()[0] - (1.0 + 0.5 * mean0)).abs() < 1e-15);
}

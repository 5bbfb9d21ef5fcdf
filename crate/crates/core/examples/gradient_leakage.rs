//! Reconstructing a training input from its gradient, with and without
//! node-side noise.

use asyncfl::attacks::{assess, invert_gradient, leakage_trials, InversionMethod, LeakageConfig};
use asyncfl::data::{gen_synthetic, DataSpec};
use asyncfl::learner::{self, ModelSpec};
use asyncfl::privacy::sigma_for;

fn main() -> asyncfl::Result<()> {
    let data_spec = DataSpec::default();
    let targets = gen_synthetic(&data_spec, 200, 5)?;
    let spec = ModelSpec::linear(data_spec.dim, data_spec.num_classes, 5);
    let model = learner::init_model(&spec);

    let target = &targets.examples()[0];
    let grad = learner::example_gradient(&model, &spec, target)?;
    for method in [InversionMethod::ClosedForm, InversionMethod::Matching] {
        let cfg = LeakageConfig {
            method,
            match_iters: 2000,
            ..LeakageConfig::default()
        };
        let r = assess(0, invert_gradient(&grad, &spec, &model, &cfg)?, &target.input, cfg.success_mse);
        println!("{method:?}: mse {:.2e} success {}", r.mse, r.success);
    }

    let calibrated = sigma_for(8.0, 1e-3, 1.0)?;
    let sigmas = [0.0, 0.05, 0.1, 0.25, calibrated];
    let levels = leakage_trials(&spec, &model, &targets, &sigmas, 1.0, 200, 5, &LeakageConfig::default())?;
    println!("{:>8} {:>6} {:>10}", "sigma", "ASR", "mean mse");
    for l in levels {
        println!("{:>8.4} {:>6.3} {:>10.3e}", l.sigma, l.asr, l.mean_mse);
    }
    Ok(())
}

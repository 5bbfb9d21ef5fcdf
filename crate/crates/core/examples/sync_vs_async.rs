//! Synchronous rounds against buffered asynchronous mixing on the same data
//! and timing draws, with the same number of node updates.
//!
//! ```text
//! cargo run --release --example sync_vs_async
//! ```

use asyncfl::asyncsim::{run_simulation, Mode};
use asyncfl::experiment::{async_rounds, build_classifier, ExperimentConfig};

fn main() -> asyncfl::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.train.learning_rate = 0.1;
    cfg.train.batch_size = 16;
    cfg.sim.rounds = 30;
    let seed = 3;
    let setup = build_classifier(&cfg, cfg.sim.nodes, 0.0, seed)?;

    println!("{:<6} {:>8} {:>9} {:>7} {:>8}", "mode", "events", "makespan", "kappa", "accuracy");
    for mode in [Mode::Sync, Mode::Async] {
        let mut sim = cfg.sim_config(seed)?;
        sim.mode = mode;
        sim.malicious_fraction = 0.0;
        sim.rounds = async_rounds(&sim, cfg.sim.rounds);
        let log = run_simulation(&sim, &setup.workload, &[], &cfg.detection)?.log;
        println!(
            "{:<6} {:>8} {:>9.2} {:>7.3} {:>8.3}",
            format!("{mode:?}").to_lowercase(),
            sim.rounds,
            log.makespan,
            log.final_kappa().unwrap_or(f64::NAN),
            log.final_accuracy().unwrap_or(f64::NAN),
        );
        let stale: Vec<String> = log.staleness_histogram.iter().map(|(s, n)| format!("{s}:{n}")).collect();
        println!("       staleness {}", stale.join(" "));
    }
    Ok(())
}

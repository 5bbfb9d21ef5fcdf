//! Loading IDX files and training the one-hidden-layer model on the bundled
//! MNIST subset, with and without node-side noise.
//!
//! ```text
//! cargo run --release --example mnist_idx [path/to/config.toml]
//! ```

use std::path::PathBuf;

use asyncfl::asyncsim::{run_simulation, Mode};
use asyncfl::experiment::{async_rounds, build_classifier, parse_config};

fn main() -> asyncfl::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/mnist_subset.toml"));
    let cfg = parse_config(&path)?;
    let setup = build_classifier(&cfg, cfg.sim.nodes, 0.0, cfg.seed)?;
    let w = &setup.workload;
    println!(
        "{} nodes x {} images, {} test images, {} parameters",
        w.shards.len(),
        w.shards[0].len(),
        w.test.len(),
        w.init.len()
    );
    for ldp in [false, true] {
        let mut sim = cfg.sim_config(cfg.seed)?;
        sim.mode = Mode::Async;
        sim.ldp = ldp;
        sim.malicious_fraction = 0.0;
        sim.rounds = async_rounds(&sim, cfg.sim.rounds);
        let log = run_simulation(&sim, w, &[], &cfg.detection)?.log;
        let last = log.last().expect("at least one row");
        println!(
            "ldp={ldp:<5} accuracy {:.3} after {} updates; per-node epsilon spent {:.0}",
            log.final_accuracy().unwrap_or(f64::NAN),
            last.event_index,
            last.epsilon_total
        );
    }
    Ok(())
}

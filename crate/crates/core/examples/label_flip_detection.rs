//! Label-flipping nodes against cloud-side screening.
//!
//! Three of ten nodes train on data with classes 0 and 1 swapped. Each
//! aggregation scores every buffered update by the test accuracy of
//! `global` mixed with that update and drops the ones below the top-80%
//! threshold.

use std::collections::BTreeMap;

use asyncfl::asyncsim::{run_simulation, LocalPolicy};
use asyncfl::experiment::{async_rounds, build_classifier, ExperimentConfig, TrainSection};

fn main() -> asyncfl::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.data.num_classes = 5;
    cfg.sim.ldp = false;
    cfg.sim.local_policy = LocalPolicy::Refresh;
    cfg.train = TrainSection {
        learning_rate: 1.0,
        batch_size: 16,
        local_epochs: 10,
    };
    cfg.attack.flip_from = 0;
    cfg.attack.flip_to = 1;
    cfg.attack.swap = true;
    let (p, seed) = (0.3, 11);

    let setup = build_classifier(&cfg, cfg.sim.nodes, p, seed)?;
    println!("malicious nodes: {:?}", setup.malicious);

    for detection in [false, true] {
        let mut sim = cfg.sim_config(seed)?;
        sim.malicious_fraction = p;
        sim.detection = detection;
        sim.buffer_size = sim.nodes;
        sim.rounds = async_rounds(&sim, cfg.sim.rounds);
        let log = run_simulation(&sim, &setup.workload, &setup.malicious, &cfg.detection)?.log;
        println!(
            "detection={detection:<5} final accuracy {:.3}",
            log.final_accuracy().unwrap_or(f64::NAN)
        );
        if detection {
            let mut flags: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
            for report in &log.detection_reports {
                for s in &report.per_node {
                    let e = flags.entry(s.node_id).or_default();
                    e.0 += s.flagged as usize;
                    e.1 += 1;
                }
            }
            for (node, (flagged, seen)) in flags {
                let tag = if setup.malicious.contains(&node) { "malicious" } else { "" };
                println!("  node {node}: flagged {flagged:>2}/{seen:<2} {tag}");
            }
        }
    }
    Ok(())
}

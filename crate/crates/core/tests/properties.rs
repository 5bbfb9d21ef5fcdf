use proptest::prelude::*;

use asyncfl::asyncsim::{aggregate_aldp, aggregate_async, select_topk, UpdateMsg};
use asyncfl::data::{partition, PartitionScheme};
use asyncfl::detection::{detect, threshold_topk};
use asyncfl::learner::{Dataset, Example};
use asyncfl::privacy;
use asyncfl::ParamVector;

fn vector(max_len: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, 1..max_len)
}

proptest! {
    #[test]
    fn clip_stays_in_ball(g in vector(200, 50.0), s in 0.01f64..10.0) {
        let c = privacy::clip(&ParamVector::from_slice(&g), s);
        prop_assert!(c.norm() <= s * (1.0 + 1e-12));
    }

    #[test]
    fn clip_keeps_direction_and_is_idempotent(g in vector(200, 50.0), s in 0.01f64..10.0) {
        let v = ParamVector::from_slice(&g);
        let c = privacy::clip(&v, s);
        let zeta = (v.norm() / s).max(1.0);
        for (a, b) in c.values().iter().zip(&g) {
            prop_assert!((a - b / zeta).abs() <= 1e-12 * b.abs().max(1.0));
        }
        let again = privacy::clip(&c, s);
        for (a, b) in again.values().iter().zip(c.values()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn clip_of_scaled_input_is_scaled_clip(g in vector(50, 5.0), s in 0.1f64..5.0, t in 0.1f64..10.0) {
        // clip(t·g, t·S) = t·clip(g, S)
        let v = ParamVector::from_slice(&g);
        let lhs = privacy::clip(&v.scaled(t), t * s);
        let rhs = privacy::clip(&v, s).scaled(t);
        for (a, b) in lhs.values().iter().zip(rhs.values()) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn topk_conserves_mass(
        pair in (1usize..100).prop_flat_map(|d| (
            prop::collection::vec(-10.0f64..10.0, d),
            prop::collection::vec(-1.0f64..1.0, d),
        )),
        ratio in 0.001f64..=1.0,
    ) {
        let (g, r) = pair;
        let (sent, rest) = select_topk(&ParamVector::from_slice(&g), &ParamVector::from_slice(&r), ratio).unwrap();
        for i in 0..g.len() {
            prop_assert_eq!(sent.values()[i] + rest.values()[i], g[i] + r[i]);
            prop_assert!(sent.values()[i] == 0.0 || rest.values()[i] == 0.0);
        }
        let keep = (ratio * g.len() as f64).ceil() as usize;
        prop_assert!(sent.values().iter().filter(|v| **v != 0.0).count() <= keep);
        let min_sent = sent.values().iter().filter(|v| **v != 0.0).map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        let max_rest = rest.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
        prop_assert!(min_sent >= max_rest);
    }

    #[test]
    fn async_mix_is_convex(
        pair in (1usize..50).prop_flat_map(|d| (
            prop::collection::vec(-10.0f64..10.0, d),
            prop::collection::vec(-10.0f64..10.0, d),
        )),
        alpha in 0.0f64..=1.0,
    ) {
        let (g, x) = pair;
        let out = aggregate_async(&ParamVector::from_slice(&g), &ParamVector::from_slice(&x), alpha).unwrap();
        for i in 0..g.len() {
            let (lo, hi) = (g[i].min(x[i]), g[i].max(x[i]));
            let v = out.values()[i];
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn batch_aggregation_is_order_free(
        deltas in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 1..8),
        alpha in 0.0f64..1.0,
    ) {
        let g = ParamVector::from_slice(&[0.5, -0.5, 1.0, 0.0, 2.0, -1.0]);
        let msgs: Vec<UpdateMsg> = deltas.iter().enumerate().map(|(k, d)| UpdateMsg {
            node_id: k,
            delta: ParamVector::from_slice(d),
            base_version: 0,
            send_time: 0.0,
            local_epochs: 1,
        }).collect();
        let fwd: Vec<&UpdateMsg> = msgs.iter().collect();
        let rev: Vec<&UpdateMsg> = msgs.iter().rev().collect();
        let a = aggregate_aldp(&g, &fwd, alpha).unwrap();
        let b = aggregate_aldp(&g, &rev, alpha).unwrap();
        for i in 0..6 {
            let mean = deltas.iter().map(|d| d[i]).sum::<f64>() / deltas.len() as f64;
            prop_assert!((a.values()[i] - b.values()[i]).abs() < 1e-12);
            prop_assert!((a.values()[i] - (g.values()[i] + (1.0 - alpha) * mean)).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_is_disjoint_and_complete(
        n in 20usize..200,
        k in 1usize..8,
        frac in 0.05f64..0.5,
        seed in any::<u64>(),
        gamma in prop::option::of(0.1f64..5.0),
    ) {
        // Each example's first feature is its unique id.
        let data = Dataset::new((0..n).map(|i| Example::new(vec![i as f64, 0.0], i % 3)).collect()).unwrap();
        let scheme = match gamma {
            Some(gamma) => PartitionScheme::LabelSkew { gamma },
            None => PartitionScheme::Iid,
        };
        let part = partition(&data, k, scheme, frac, seed).unwrap();
        prop_assert_eq!(part.shards.len(), k);
        let mut ids: Vec<usize> = part.test.examples().iter()
            .chain(part.shards.iter().flat_map(|s| s.examples()))
            .map(|e| {
                let id = e.input[0] as usize;
                assert_eq!(e.label, id % 3);
                id
            })
            .collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn threshold_keeps_top_share(accs in prop::collection::vec(0.0f64..1.0, 1..40), s in 1.0f64..=100.0) {
        let thr = threshold_topk(&accs, s).unwrap();
        let scores: Vec<(usize, f64)> = accs.iter().copied().enumerate().collect();
        let (normal, flagged) = detect(&scores, thr);
        let n_keep = ((s / 100.0 * accs.len() as f64) - 1e-9).ceil().max(1.0) as usize;
        // Ties at the threshold are all kept, so at least n_keep survive.
        prop_assert!(normal.len() >= n_keep);
        prop_assert_eq!(normal.len() + flagged.len(), accs.len());
        let strictly_above = accs.iter().filter(|a| **a > thr).count();
        prop_assert!(strictly_above < n_keep);
        for k in &flagged {
            prop_assert!(accs[*k] < thr);
        }
    }
}

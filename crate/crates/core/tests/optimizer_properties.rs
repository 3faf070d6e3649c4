//! Optimizer properties checked against independent recomputation.

use std::collections::BTreeMap;

use proptest::prelude::*;

use semflow_core::models::{ModelRegistry, ModelSpec};
use semflow_core::optimizer::{progressive_estimate, select_models, JoinGraph, OpEstimate, SamplingConfig};
use semflow_core::plan::NodeId;

fn registry(qualities: &[f64], fees: &[f64]) -> ModelRegistry {
    ModelRegistry::new(
        qualities
            .iter()
            .zip(fees)
            .enumerate()
            .map(|(i, (q, f))| ModelSpec::new(format!("m{i}"), *f, 2.0 * f, *q, i as u32 + 1))
            .collect(),
    )
    .unwrap()
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<(f64, f64, f64)>, f64)> {
    (1usize..=4, 1usize..=4).prop_flat_map(|(tiers, ops)| {
        (
            prop::collection::vec(0.01f64..0.08, tiers),
            prop::collection::vec(0.05f64..0.9, tiers),
            prop::collection::vec((1.0f64..5000.0, 1.0f64..400.0, 0.0f64..40.0), ops),
            prop_oneof![Just(0.02), Just(0.05), Just(0.1), Just(0.2)],
        )
            .prop_map(|(q_steps, fee_steps, ops, eps)| {
                // qualities and fees increase with tier
                let mut q = vec![0.99];
                let mut f = vec![1e-5];
                for (dq, df) in q_steps.iter().zip(&fee_steps).skip(1) {
                    q.push(q.last().unwrap() * (1.0 - dq));
                    f.push(f.last().unwrap() * df);
                }
                q.reverse();
                f.reverse();
                (q, f, ops, eps)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 500, ..ProptestConfig::default() })]

    /// Every accepted step is feasible and has the best cost saved per unit
    /// of quality lost among all feasible one-tier downgrades at that point.
    #[test]
    fn greedy_steps_follow_the_local_rule((q, f, ops, eps) in instance()) {
        let reg = registry(&q, &f);
        let tiers = reg.models();
        let estimates: Vec<OpEstimate> = ops
            .iter()
            .enumerate()
            .map(|(i, (c, tin, tout))| OpEstimate {
                node_id: i as NodeId + 1,
                op: "SemFilter".into(),
                cardinality: *c,
                input_tokens: *tin,
                output_tokens: *tout,
            })
            .collect();
        let cost = |e: &OpEstimate, m: &ModelSpec| e.cardinality * e.input_tokens * m.fee_in + e.cardinality * e.output_tokens * m.fee_out;
        let quality = |rank: &BTreeMap<NodeId, usize>| rank.values().map(|r| tiers[*r].quality).product::<f64>();
        let sel = select_models(&estimates, &reg, eps);
        let mut rank: BTreeMap<NodeId, usize> = estimates.iter().map(|e| (e.node_id, tiers.len() - 1)).collect();
        let q0 = quality(&rank);
        for step in &sel.steps {
            let q_now = quality(&rank);
            let mut best = f64::NEG_INFINITY;
            for e in &estimates {
                let r = rank[&e.node_id];
                if r == 0 {
                    continue;
                }
                let mut next = rank.clone();
                next.insert(e.node_id, r - 1);
                let q_after = quality(&next);
                let saved = cost(e, &tiers[r]) - cost(e, &tiers[r - 1]);
                if (q0 - q_after) / q0 <= eps && saved > 0.0 {
                    best = best.max(saved / (q_now - q_after));
                }
            }
            prop_assert!((step.ratio - best).abs() <= 1e-9 * best.abs(), "step ratio {} vs best {}", step.ratio, best);
            let r = rank[&step.node_id];
            prop_assert_eq!(&tiers[r].model_name, &step.from);
            rank.insert(step.node_id, r - 1);
        }
        prop_assert!((q0 - quality(&rank)) / q0 <= eps + 1e-12);
        for e in &estimates {
            prop_assert_eq!(&sel.assignment[&e.node_id].model_name, &tiers[rank[&e.node_id]].model_name);
        }
    }
}

#[test]
fn tight_budget_keeps_everything_on_top_tier() {
    // q 0.95 vs 0.80: any downgrade loses ~15.8% of plan quality
    let reg = ModelRegistry::new(vec![
        ModelSpec::new("small", 1.0, 0.0, 0.80, 1),
        ModelSpec::new("large", 10.0, 0.0, 0.95, 2),
    ])
    .unwrap();
    let ops: Vec<OpEstimate> = (1..=2)
        .map(|id| OpEstimate {
            node_id: id,
            op: "SemFilter".into(),
            cardinality: 1.0,
            input_tokens: 1.0,
            output_tokens: 0.0,
        })
        .collect();
    let s = select_models(&ops, &reg, 0.05);
    assert!(s.assignment.values().all(|m| m.model_name == "large"));
    let s = select_models(&ops, &reg, 0.20);
    let small: Vec<NodeId> = s.assignment.iter().filter(|(_, m)| m.model_name == "small").map(|(id, _)| *id).collect();
    assert_eq!(small, vec![1]);
}

#[test]
fn chain_join_prefers_the_selective_pair() {
    // a(1000) - b(10) - c(1000): joining b with either side first costs
    // 1000·10·s, so the cheaper edge goes first.
    let g = JoinGraph {
        names: vec!["a".into(), "b".into(), "c".into()],
        cards: vec![1000.0, 10.0, 1000.0],
        edges: vec![(0, 1, 0.001), (1, 2, 0.1)],
    };
    let best = g.best_tree().unwrap();
    assert_eq!(best.canonical(&g.names), "((a b) c)");
    // (a b) = 10 rows, then 10·1000·0.1 = 1000
    assert_eq!(g.tree_cost(&best), 10.0 + 1000.0);
}

#[test]
fn disconnected_graph_has_no_tree() {
    let g = JoinGraph { names: vec!["a".into(), "b".into()], cards: vec![1.0, 1.0], edges: vec![] };
    assert!(g.best_tree().is_none());
}

#[test]
fn progressive_sampling_converges_to_the_true_fraction() {
    for truth in [0.1, 0.37, 0.8] {
        let n = 5000;
        let keep = |i: usize| (i as f64 + 0.5) / n as f64 <= truth;
        let cfg = SamplingConfig { epsilon_ci: 0.02, max_sample: 20_000, ..Default::default() };
        let (est, draws, half) =
            progressive_estimate(n, None, &cfg, |idx| Ok(idx.iter().map(|i| keep(*i)).collect())).unwrap();
        assert!(half <= 0.02, "half-width {half}");
        assert!((est - truth).abs() <= 3.0 * half, "truth {truth} est {est} after {draws} draws");
    }
}

#[test]
fn weighted_sampling_stays_unbiased() {
    // weights correlated with the predicate must not bias the estimate
    let n = 2000;
    let weights: Vec<f64> = (0..n).map(|i| if i % 4 == 0 { 3.0 } else { 0.5 }).collect();
    let cfg = SamplingConfig { epsilon_ci: 0.01, max_sample: 200_000, ..Default::default() };
    let (est, _, half) =
        progressive_estimate(n, Some(&weights), &cfg, |idx| Ok(idx.iter().map(|i| i % 4 == 0).collect())).unwrap();
    assert!((est - 0.25).abs() <= 3.0 * half.max(1e-3), "estimate {est} half {half}");
}

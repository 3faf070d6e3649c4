//! Quality-bounded model assignment by greedy tier downgrades.

use std::collections::BTreeMap;

use serde::Serialize;

use super::cost::{op_cost, OpEstimate};
use crate::models::{ModelRegistry, ModelSpec};
use crate::plan::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionStep {
    pub node_id: NodeId,
    pub from: String,
    pub to: String,
    pub delta_cost: f64,
    pub delta_quality: f64,
    pub ratio: f64,
    /// Plan quality after the step.
    pub quality: f64,
    pub relative_drop: f64,
    /// Estimated plan cost after the step.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub assignment: BTreeMap<NodeId, ModelSpec>,
    pub steps: Vec<SelectionStep>,
    pub initial_quality: f64,
    pub quality: f64,
    pub cost: f64,
}

/// Plan quality: the product of the assigned models' quality scores.
pub fn plan_quality<'a>(models: impl IntoIterator<Item = &'a ModelSpec>) -> f64 {
    models.into_iter().map(|m| m.quality).product()
}

/// Starts every operator on the top tier, then repeatedly takes the
/// one-tier downgrade with the largest cost saved per unit of plan quality
/// lost, among those keeping the relative quality drop within `epsilon`.
/// Ties go to the lower node id. Stops when no such downgrade saves cost.
pub fn select_models(estimates: &[OpEstimate], registry: &ModelRegistry, epsilon: f64) -> Selection {
    let mut sorted = estimates.to_vec();
    sorted.sort_by_key(|e| e.node_id);
    let estimates = &sorted[..];
    let tiers = registry.models();
    let mut rank: BTreeMap<NodeId, usize> = estimates.iter().map(|e| (e.node_id, tiers.len() - 1)).collect();
    let quality = |rank: &BTreeMap<NodeId, usize>| plan_quality(rank.values().map(|r| &tiers[*r]));
    let total =
        |rank: &BTreeMap<NodeId, usize>| estimates.iter().map(|e| op_cost(e, &tiers[rank[&e.node_id]])).sum::<f64>();
    let q0 = quality(&rank);
    let mut q = q0;
    let mut steps = Vec::new();
    loop {
        let mut pick: Option<(f64, NodeId, f64, f64, f64)> = None;
        for e in estimates {
            let r = rank[&e.node_id];
            if r == 0 {
                continue;
            }
            let mut tentative = rank.clone();
            tentative.insert(e.node_id, r - 1);
            let q_after = quality(&tentative);
            let dq = q - q_after;
            if (q0 - q_after) / q0 > epsilon {
                continue;
            }
            let dc = op_cost(e, &tiers[r]) - op_cost(e, &tiers[r - 1]);
            if dc <= 0.0 || dq <= 0.0 {
                continue;
            }
            let ratio = dc / dq;
            if pick.is_none_or(|p| ratio > p.0) {
                pick = Some((ratio, e.node_id, dc, dq, q_after));
            }
        }
        let Some((ratio, id, dc, dq, q_after)) = pick else { break };
        let r = rank[&id];
        rank.insert(id, r - 1);
        q = q_after;
        steps.push(SelectionStep {
            node_id: id,
            from: tiers[r].model_name.clone(),
            to: tiers[r - 1].model_name.clone(),
            delta_cost: dc,
            delta_quality: dq,
            ratio,
            quality: q,
            relative_drop: (q0 - q) / q0,
            cost: total(&rank),
        });
    }
    let assignment = rank.iter().map(|(id, r)| (*id, tiers[*r].clone())).collect();
    Selection { assignment, steps, initial_quality: q0, quality: q, cost: total(&rank) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(id: NodeId) -> OpEstimate {
        OpEstimate { node_id: id, op: "SemFilter".into(), cardinality: 1.0, input_tokens: 1.0, output_tokens: 0.0 }
    }

    fn two_tier() -> ModelRegistry {
        ModelRegistry::new(vec![
            ModelSpec::new("small", 1.0, 0.0, 0.80, 1),
            ModelSpec::new("large", 10.0, 0.0, 0.95, 2),
        ])
        .unwrap()
    }

    #[test]
    fn tight_budget_keeps_top_tier() {
        let s = select_models(&[op(1), op(2)], &two_tier(), 0.05);
        assert!(s.steps.is_empty());
        assert!(s.assignment.values().all(|m| m.model_name == "large"));
    }

    #[test]
    fn looser_budget_downgrades_lowest_id_once() {
        let s = select_models(&[op(1), op(2)], &two_tier(), 0.20);
        assert_eq!(s.steps.len(), 1);
        assert_eq!(s.assignment[&1].model_name, "small");
        assert_eq!(s.assignment[&2].model_name, "large");
        assert!((s.steps[0].relative_drop - (1.0 - 0.80 / 0.95)).abs() < 1e-12);
    }

    #[test]
    fn no_semantic_ops_gives_empty_assignment() {
        assert!(select_models(&[], &two_tier(), 0.05).assignment.is_empty());
    }
}

//! Equivalence-preserving rewrites over unary chains of row-wise operators.
//!
//! Relational filters sink below semantic operators, and column-producing
//! semantic operators rise toward the first operator that reads their output
//! (or the top of the chain when nothing does). Moves only cross
//! schema-preserving operators, so the output schema never changes.

use serde::Serialize;

use crate::plan::{NodeId, Operator, PlanNode};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "rule")]
pub enum RewriteEvent {
    /// A relational Filter moved below a semantic operator.
    FilterBelowSemantic { filter: NodeId, semantic: NodeId },
    /// A semantic operator moved up past the listed operators.
    SemanticRaised { node: NodeId, past: Vec<NodeId> },
    /// A SemExtract was split; `new_node` carries `targets`.
    ExtractSplit { node: NodeId, new_node: NodeId, targets: Vec<String> },
}

fn in_chain(op: &Operator) -> bool {
    matches!(
        op,
        Operator::Filter { .. }
            | Operator::SemFilter { .. }
            | Operator::Sort { .. }
            | Operator::Limit { .. }
            | Operator::SemExtract { .. }
            | Operator::SemGroup { .. }
    )
}

fn is_row_semantic(op: &Operator) -> bool {
    matches!(op, Operator::SemExtract { .. } | Operator::SemGroup { .. } | Operator::SemFilter { .. })
}

/// Operators a column-producing semantic op may rise past.
fn passable(op: &Operator) -> bool {
    matches!(op, Operator::Filter { .. } | Operator::SemFilter { .. } | Operator::Sort { .. } | Operator::Limit { .. })
}

fn reads(op: &Operator, col: &str) -> bool {
    op.referenced_columns().iter().any(|c| c == col)
}

/// Applies the rewrites to a fixpoint.
pub fn apply_rules(plan: &PlanNode) -> PlanNode {
    apply_rules_traced(plan).0
}

pub fn apply_rules_traced(plan: &PlanNode) -> (PlanNode, Vec<RewriteEvent>) {
    let mut next_id = plan.max_id() + 1;
    let mut events = Vec::new();
    let out = rewrite(plan.clone(), &mut next_id, &mut events);
    (out, events)
}

type Link = (NodeId, Operator);

fn rewrite(node: PlanNode, next_id: &mut NodeId, events: &mut Vec<RewriteEvent>) -> PlanNode {
    // Peel the chain, top first.
    let mut chain: Vec<Link> = Vec::new();
    let mut cur = node;
    while in_chain(&cur.op) && cur.children.len() == 1 {
        let child = cur.children.pop().expect("one child");
        chain.push((cur.id, cur.op));
        cur = child;
    }
    let children = std::mem::take(&mut cur.children);
    cur.children = children.into_iter().map(|c| rewrite(c, next_id, events)).collect();

    chain.reverse();
    loop {
        let mut changed = sink_filters(&mut chain, events);
        changed |= raise_semantic(&mut chain, next_id, events);
        if !changed {
            break;
        }
    }
    chain.into_iter().fold(cur, |child, (id, op)| PlanNode::new(id, op, vec![child]))
}

/// Swaps a Filter below an adjacent row-wise semantic operator when the
/// predicate does not read that operator's output. `chain` is bottom-up.
fn sink_filters(chain: &mut [Link], events: &mut Vec<RewriteEvent>) -> bool {
    let mut changed = false;
    let mut i = 1;
    while i < chain.len() {
        let (below, above) = (&chain[i - 1].1, &chain[i].1);
        if let Operator::Filter { predicate } = above {
            let produced = below.produced_columns();
            if is_row_semantic(below) && !predicate.columns().iter().any(|c| produced.contains(c)) {
                events.push(RewriteEvent::FilterBelowSemantic { filter: chain[i].0, semantic: chain[i - 1].0 });
                chain.swap(i - 1, i);
                changed = true;
                i = i.saturating_sub(1).max(1);
                continue;
            }
        }
        i += 1;
    }
    changed
}

/// Index of the link a column produced at `from` must stay below: its first
/// reader or the first link it cannot pass. `chain.len()` means the top.
fn destination(chain: &[Link], from: usize, col: &str) -> usize {
    for (j, (_, op)) in chain.iter().enumerate().skip(from + 1) {
        if reads(op, col) || !passable(op) {
            return j;
        }
    }
    chain.len()
}

fn raise_semantic(chain: &mut Vec<Link>, next_id: &mut NodeId, events: &mut Vec<RewriteEvent>) -> bool {
    for i in 0..chain.len() {
        match &chain[i].1 {
            Operator::SemGroup { label_column, .. } => {
                let d = destination(chain, i, label_column);
                if d > i + 1 {
                    let link = chain.remove(i);
                    let past = chain[i..d - 1].iter().map(|l| l.0).collect();
                    events.push(RewriteEvent::SemanticRaised { node: link.0, past });
                    chain.insert(d - 1, link);
                    return true;
                }
            }
            Operator::SemExtract { source_columns, target_columns, instruction_prompt } => {
                // Destinations are made non-decreasing so target order, and
                // with it the output schema, is unchanged.
                let mut dest: Vec<usize> = target_columns.iter().map(|t| destination(chain, i, t)).collect();
                for k in (0..dest.len().saturating_sub(1)).rev() {
                    dest[k] = dest[k].min(dest[k + 1]);
                }
                if dest.iter().all(|d| *d == i + 1) {
                    continue;
                }
                // Groups of consecutive targets sharing a destination.
                let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
                for (k, d) in dest.iter().enumerate() {
                    match groups.last_mut() {
                        Some((gd, ks)) if gd == d => ks.push(k),
                        _ => groups.push((*d, vec![k])),
                    }
                }
                let (id, prompt) = (chain[i].0, instruction_prompt.clone());
                let (sources, targets) = (source_columns.clone(), target_columns.clone());
                let mut placed: Vec<(usize, Link)> = Vec::new();
                for (g, (d, ks)) in groups.iter().enumerate() {
                    let gid = if g == 0 {
                        id
                    } else {
                        let n = *next_id;
                        *next_id += 1;
                        events.push(RewriteEvent::ExtractSplit {
                            node: id,
                            new_node: n,
                            targets: ks.iter().map(|k| targets[*k].clone()).collect(),
                        });
                        n
                    };
                    let op = Operator::SemExtract {
                        source_columns: ks.iter().map(|k| sources[*k].clone()).collect(),
                        target_columns: ks.iter().map(|k| targets[*k].clone()).collect(),
                        instruction_prompt: prompt.clone(),
                    };
                    placed.push((*d, (gid, op)));
                }
                chain.remove(i);
                // Insert from the highest destination down so indices stay valid;
                // destinations refer to positions in the chain before removal.
                for (d, link) in placed.into_iter().rev() {
                    if d > i + 1 {
                        let past = chain[i..d - 1].iter().map(|l| l.0).collect();
                        events.push(RewriteEvent::SemanticRaised { node: link.0, past });
                    }
                    chain.insert(d - 1, link);
                }
                return true;
            }
            _ => {}
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::Expr;

    fn scan() -> PlanNode {
        PlanNode::leaf(1, Operator::FileScan { dataset: "d".into(), format: "csv".into() })
    }

    fn extract(id: NodeId, src: &[&str], tgt: &[&str], child: PlanNode) -> PlanNode {
        PlanNode::new(
            id,
            Operator::SemExtract {
                source_columns: src.iter().map(|s| s.to_string()).collect(),
                target_columns: tgt.iter().map(|s| s.to_string()).collect(),
                instruction_prompt: "x".into(),
            },
            vec![child],
        )
    }

    fn semfilter(id: NodeId, col: &str, child: PlanNode) -> PlanNode {
        PlanNode::new(id, Operator::SemFilter { columns: vec![col.into()], predicate_prompt: "p".into() }, vec![child])
    }

    fn outline(p: &PlanNode) -> Vec<(NodeId, String)> {
        p.iter().map(|n| (n.id, n.kind().name().to_string())).collect()
    }

    #[test]
    fn filter_sinks_below_semantic_ops() {
        let p = PlanNode::new(
            4,
            Operator::Filter { predicate: Expr::parse("c2 > 1").unwrap() },
            vec![semfilter(3, "k1", extract(2, &["c1"], &["k1"], scan()))],
        );
        let (out, events) = apply_rules_traced(&p);
        assert_eq!(
            outline(&out),
            vec![(3, "SemFilter".into()), (2, "SemExtract".into()), (4, "Filter".into()), (1, "FileScan".into())]
        );
        assert_eq!(events.len(), 2);
    }

    #[test]
    fn unused_target_rises_to_top() {
        let p = semfilter(3, "k1", extract(2, &["c1", "c2"], &["k1", "k2"], scan()));
        let out = apply_rules(&p);
        assert_eq!(
            outline(&out),
            vec![(4, "SemExtract".into()), (3, "SemFilter".into()), (2, "SemExtract".into()), (1, "FileScan".into())]
        );
        let Operator::SemExtract { target_columns, .. } = &out.op else { panic!() };
        assert_eq!(target_columns, &vec!["k2".to_string()]);
    }

    #[test]
    fn limit_blocks_filters_but_not_extracts() {
        let p = PlanNode::new(
            3,
            Operator::Filter { predicate: Expr::parse("a > 1").unwrap() },
            vec![PlanNode::new(2, Operator::Limit { k: 3 }, vec![semfilter(5, "a", scan())])],
        );
        assert_eq!(apply_rules(&p), p);
        let q = PlanNode::new(3, Operator::Limit { k: 3 }, vec![extract(2, &["a"], &["b"], scan())]);
        assert_eq!(outline(&apply_rules(&q))[0], (2, "SemExtract".into()));
    }
}

//! Join ordering by dynamic programming over connected relation subsets.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::plan::{infer_schema, BinaryOp, Expr, JoinMode, NodeId, Operator, PlanNode, ProjectItem, SchemaProvider};

/// Exact DP up to this many relations; a greedy pairing beyond.
pub const DP_LIMIT: usize = 12;

/// Relations with cardinalities and pairwise predicate selectivities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JoinGraph {
    pub names: Vec<String>,
    pub cards: Vec<f64>,
    /// `(a, b, selectivity)` with `a < b`.
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JoinTree {
    Leaf(usize),
    Join(Box<JoinTree>, Box<JoinTree>),
}

impl JoinTree {
    pub fn mask(&self) -> u64 {
        match self {
            JoinTree::Leaf(i) => 1 << i,
            JoinTree::Join(a, b) => a.mask() | b.mask(),
        }
    }

    /// Orientation-free rendering with the smaller side first, e.g. `((a b) c)`.
    pub fn canonical(&self, names: &[String]) -> String {
        match self {
            JoinTree::Leaf(i) => names[*i].clone(),
            JoinTree::Join(a, b) => {
                let (x, y) = (a.canonical(names), b.canonical(names));
                if x <= y {
                    format!("({x} {y})")
                } else {
                    format!("({y} {x})")
                }
            }
        }
    }

    fn leaves(&self, out: &mut Vec<usize>) {
        match self {
            JoinTree::Leaf(i) => out.push(*i),
            JoinTree::Join(a, b) => {
                a.leaves(out);
                b.leaves(out);
            }
        }
    }
}

impl JoinGraph {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Estimated rows of the join of `mask`: product of relation sizes and of
    /// the selectivities of edges inside the subset.
    pub fn card(&self, mask: u64) -> f64 {
        let mut c = 1.0;
        for (i, r) in self.cards.iter().enumerate() {
            if mask & (1 << i) != 0 {
                c *= r;
            }
        }
        for (a, b, s) in &self.edges {
            if mask & (1 << a) != 0 && mask & (1 << b) != 0 {
                c *= s;
            }
        }
        c
    }

    fn adjacent(&self, a: u64, b: u64) -> bool {
        self.edges.iter().any(|(x, y, _)| {
            let (x, y) = (1u64 << x, 1u64 << y);
            (a & x != 0 && b & y != 0) || (a & y != 0 && b & x != 0)
        })
    }

    pub fn connected(&self, mask: u64) -> bool {
        if mask == 0 {
            return false;
        }
        let mut seen = mask & mask.wrapping_neg();
        loop {
            let mut grown = seen;
            for (a, b, _) in &self.edges {
                let (x, y) = (1u64 << a, 1u64 << b);
                if mask & x != 0 && mask & y != 0 && (seen & (x | y)) != 0 {
                    grown |= x | y;
                }
            }
            if grown == seen {
                return seen == mask;
            }
            seen = grown;
        }
    }

    /// Sum of intermediate result sizes over all joins of the tree.
    pub fn tree_cost(&self, t: &JoinTree) -> f64 {
        match t {
            JoinTree::Leaf(_) => 0.0,
            JoinTree::Join(a, b) => self.tree_cost(a) + self.tree_cost(b) + self.card(t.mask()),
        }
    }

    fn orient(&self, a: JoinTree, b: JoinTree) -> JoinTree {
        if a.canonical(&self.names) <= b.canonical(&self.names) {
            JoinTree::Join(Box::new(a), Box::new(b))
        } else {
            JoinTree::Join(Box::new(b), Box::new(a))
        }
    }

    /// Cheapest bushy tree without cross products; ties go to the
    /// lexicographically smallest canonical form. `None` when the graph is
    /// empty or disconnected.
    pub fn best_tree(&self) -> Option<JoinTree> {
        let n = self.len();
        let full: u64 = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        if n == 0 || !self.connected(full) {
            return None;
        }
        if n > DP_LIMIT {
            return Some(self.greedy());
        }
        let mut best: Vec<Option<(f64, JoinTree, String)>> = vec![None; 1 << n];
        for i in 0..n {
            let t = JoinTree::Leaf(i);
            let s = t.canonical(&self.names);
            best[1 << i] = Some((0.0, t, s));
        }
        for s in 1..=full {
            if s.count_ones() < 2 || !self.connected(s) {
                continue;
            }
            let low = s & s.wrapping_neg();
            let mut cand: Option<(f64, JoinTree, String)> = None;
            let mut sub = (s - 1) & s;
            while sub > 0 {
                let rest = s ^ sub;
                if sub & low != 0 {
                    if let (Some(l), Some(r)) = (&best[sub as usize], &best[rest as usize]) {
                        let cost = l.0 + r.0 + self.card(s);
                        let better = match &cand {
                            None => true,
                            Some(c) => {
                                cost < c.0
                                    || (cost == c.0
                                        && self.orient(l.1.clone(), r.1.clone()).canonical(&self.names) < c.2)
                            }
                        };
                        if better {
                            let t = self.orient(l.1.clone(), r.1.clone());
                            let key = t.canonical(&self.names);
                            cand = Some((cost, t, key));
                        }
                    }
                }
                sub = (sub - 1) & s;
            }
            best[s as usize] = cand;
        }
        best[full as usize].take().map(|b| b.1)
    }

    /// Repeatedly joins the adjacent pair with the smallest result.
    fn greedy(&self) -> JoinTree {
        let mut parts: Vec<JoinTree> = (0..self.len()).map(JoinTree::Leaf).collect();
        while parts.len() > 1 {
            let mut pick: Option<(f64, String, usize, usize)> = None;
            for i in 0..parts.len() {
                for j in i + 1..parts.len() {
                    let (a, b) = (parts[i].mask(), parts[j].mask());
                    if !self.adjacent(a, b) {
                        continue;
                    }
                    let c = self.card(a | b);
                    let key = self.orient(parts[i].clone(), parts[j].clone()).canonical(&self.names);
                    if pick.as_ref().is_none_or(|p| c < p.0 || (c == p.0 && key < p.1)) {
                        pick = Some((c, key, i, j));
                    }
                }
            }
            let (_, _, i, j) = pick.expect("connected graph always has an adjacent pair");
            let b = parts.remove(j);
            let a = parts.remove(i);
            parts.push(self.orient(a, b));
        }
        parts.pop().expect("one tree")
    }
}

/// A maximal tree of inner equi-joins and the subtrees it joins.
#[derive(Debug, Clone)]
pub struct JoinBlock {
    pub root_id: NodeId,
    pub join_ids: Vec<NodeId>,
    pub relations: Vec<PlanNode>,
    pub names: Vec<String>,
    /// Each conjunct with the two relations it connects.
    pub conjuncts: Vec<(usize, usize, Expr)>,
    /// Relation leaves of the original tree.
    pub original: JoinTree,
    pub columns: Vec<Vec<String>>,
}

fn is_inner_equi(op: &Operator) -> Option<&Expr> {
    match op {
        Operator::Join { mode: JoinMode::Inner, condition } => {
            let all_eq = condition.conjuncts().iter().all(|c| {
                matches!(c, Expr::Binary { op: BinaryOp::Eq, left, right }
                    if matches!(left.as_ref(), Expr::Column(_)) && matches!(right.as_ref(), Expr::Column(_)))
            });
            all_eq.then_some(condition)
        }
        _ => None,
    }
}

fn relation_name(node: &PlanNode) -> String {
    match &node.op {
        Operator::FileScan { dataset, .. } => dataset.clone(),
        Operator::DbScan { connector, sql_text, .. } => format!("{connector}:{sql_text}"),
        _ => format!("#{}", node.id),
    }
}

/// Collects the join block rooted at `node`, or `None` when `node` is not
/// an inner equi-join or the block cannot be reordered safely.
pub fn join_block(node: &PlanNode, schemas: &dyn SchemaProvider) -> Option<JoinBlock> {
    is_inner_equi(&node.op)?;
    let mut relations = Vec::new();
    let mut join_ids = Vec::new();
    let mut conds: Vec<Expr> = Vec::new();
    fn walk(n: &PlanNode, rel: &mut Vec<PlanNode>, ids: &mut Vec<NodeId>, conds: &mut Vec<Expr>) -> JoinTree {
        match is_inner_equi(&n.op) {
            Some(c) if n.children.len() == 2 => {
                ids.push(n.id);
                conds.extend(c.conjuncts().into_iter().cloned());
                let a = walk(&n.children[0], rel, ids, conds);
                let b = walk(&n.children[1], rel, ids, conds);
                JoinTree::Join(Box::new(a), Box::new(b))
            }
            _ => {
                rel.push(n.clone());
                JoinTree::Leaf(rel.len() - 1)
            }
        }
    }
    let original = walk(node, &mut relations, &mut join_ids, &mut conds);
    if relations.len() > 63 {
        return None;
    }
    let mut columns = Vec::new();
    for r in &relations {
        columns.push(infer_schema(r, schemas).ok()?.names().map(str::to_string).collect::<Vec<_>>());
    }
    let owner = |c: &str| columns.iter().position(|cols| cols.iter().any(|x| x == c));
    let mut conjuncts = Vec::new();
    for c in conds {
        let cols = c.columns();
        let [a, b] = cols.as_slice() else { return None };
        let (ra, rb) = (owner(a)?, owner(b)?);
        if ra == rb {
            return None;
        }
        conjuncts.push((ra.min(rb), ra.max(rb), c));
    }
    let mut names: Vec<String> = relations.iter().map(relation_name).collect();
    for i in 0..names.len() {
        if names.iter().filter(|n| **n == names[i]).count() > 1 {
            names[i] = format!("{}#{}", names[i], relations[i].id);
        }
    }
    Some(JoinBlock { root_id: node.id, join_ids, relations, names, conjuncts, original, columns })
}

impl JoinBlock {
    /// Graph with cardinalities from `cards` (keyed by relation root id) and
    /// edge selectivities from `edge_sel` (keyed by sorted name pair).
    pub fn graph(&self, cards: &BTreeMap<NodeId, f64>, edge_sel: &BTreeMap<(String, String), f64>) -> JoinGraph {
        let card: Vec<f64> = self.relations.iter().map(|r| cards.get(&r.id).copied().unwrap_or(1000.0)).collect();
        let mut edges: Vec<(usize, usize, f64)> = Vec::new();
        for (a, b, _) in &self.conjuncts {
            if edges.iter().any(|e| e.0 == *a && e.1 == *b) {
                continue;
            }
            let key = pair_key(&self.names[*a], &self.names[*b]);
            let s = edge_sel.get(&key).copied().unwrap_or(1.0 / card[*a].max(card[*b]).max(1.0));
            edges.push((*a, *b, s));
        }
        edges.sort_by_key(|e| (e.0, e.1));
        JoinGraph { names: self.names.clone(), cards: card, edges }
    }

    /// Conjuncts connecting the two relation sets.
    fn crossing(&self, l: u64, r: u64) -> Vec<Expr> {
        self.conjuncts
            .iter()
            .filter(|(a, b, _)| {
                let (x, y) = (1u64 << a, 1u64 << b);
                (l & x != 0 && r & y != 0) || (l & y != 0 && r & x != 0)
            })
            .map(|(_, _, e)| e.clone())
            .collect()
    }

    /// Plan for `tree`, reusing the block's join ids in pre-order (ascending
    /// for a new tree, original order for the original one). A Project with
    /// id `project_id` restores the original column order when needed.
    pub fn build(&self, tree: &JoinTree, project_id: NodeId) -> PlanNode {
        let mut ids = self.join_ids.clone();
        if *tree != self.original {
            ids.sort_unstable();
        }
        let mut ids = ids.into_iter();
        let node = self.build_rec(tree, &mut ids);
        let mut want = Vec::new();
        self.original.leaves(&mut want);
        let mut got = Vec::new();
        tree.leaves(&mut got);
        if want == got {
            return node;
        }
        let items = want
            .iter()
            .flat_map(|r| self.columns[*r].iter())
            .map(|c| ProjectItem { name: c.clone(), expr: Expr::col(c.clone()) })
            .collect();
        PlanNode::new(project_id, Operator::Project { items }, vec![node])
    }

    fn build_rec(&self, tree: &JoinTree, ids: &mut impl Iterator<Item = NodeId>) -> PlanNode {
        match tree {
            JoinTree::Leaf(i) => self.relations[*i].clone(),
            JoinTree::Join(a, b) => {
                let id = ids.next().expect("one id per join");
                let l = self.build_rec(a, ids);
                let r = self.build_rec(b, ids);
                let condition = Expr::conjunction(self.crossing(a.mask(), b.mask())).expect("connected split");
                PlanNode::new(id, Operator::Join { mode: JoinMode::Inner, condition }, vec![l, r])
            }
        }
    }
}

pub fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JoinOrderTrace {
    pub block_root: NodeId,
    pub graph: JoinGraph,
    pub before: String,
    pub after: String,
    pub cost_before: f64,
    pub cost_after: f64,
}

/// Reorders every inner equi-join block. Relation subtrees are reordered
/// first; `cards` must cover their root ids.
pub fn order_joins(
    plan: &PlanNode,
    schemas: &dyn SchemaProvider,
    cards: &BTreeMap<NodeId, f64>,
    edge_sel: &BTreeMap<(String, String), f64>,
) -> (PlanNode, Vec<JoinOrderTrace>) {
    let mut next_id = plan.max_id() + 1;
    let mut traces = Vec::new();
    let out = reorder(plan, schemas, cards, edge_sel, &mut next_id, &mut traces);
    (out, traces)
}

fn reorder(
    node: &PlanNode,
    schemas: &dyn SchemaProvider,
    cards: &BTreeMap<NodeId, f64>,
    edge_sel: &BTreeMap<(String, String), f64>,
    next_id: &mut NodeId,
    traces: &mut Vec<JoinOrderTrace>,
) -> PlanNode {
    if let Some(mut block) = join_block(node, schemas) {
        for r in block.relations.iter_mut() {
            *r = reorder(r, schemas, cards, edge_sel, next_id, traces);
        }
        let g = block.graph(cards, edge_sel);
        if let Some(best) = g.best_tree() {
            let (before, after) = (block.original.canonical(&g.names), best.canonical(&g.names));
            let (cost_before, cost_after) = (g.tree_cost(&block.original), g.tree_cost(&best));
            if after == before {
                traces.push(JoinOrderTrace { block_root: node.id, graph: g, before, after, cost_before, cost_after });
                return replace_relations(node, &block.relations, &mut 0);
            }
            let id = *next_id;
            let built = block.build(&best, id);
            if built.id == id {
                *next_id += 1;
            }
            traces.push(JoinOrderTrace { block_root: node.id, graph: g, before, after, cost_before, cost_after });
            return built;
        }
        return replace_relations(node, &block.relations, &mut 0);
    }
    let children = node.children.iter().map(|c| reorder(c, schemas, cards, edge_sel, next_id, traces)).collect();
    PlanNode::new(node.id, node.op.clone(), children)
}

/// The block rooted at `node` with its relation subtrees swapped for `rels`.
fn replace_relations(node: &PlanNode, rels: &[PlanNode], next: &mut usize) -> PlanNode {
    match is_inner_equi(&node.op) {
        Some(_) if node.children.len() == 2 => {
            let children = node.children.iter().map(|c| replace_relations(c, rels, next)).collect();
            PlanNode::new(node.id, node.op.clone(), children)
        }
        _ => {
            *next += 1;
            rels[*next - 1].clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf_names(n: usize) -> Vec<String> {
        (0..n).map(|i| ((b'a' + i as u8) as char).to_string()).collect()
    }

    /// Every bushy tree over `mask` without cross products.
    fn all_trees(g: &JoinGraph, mask: u64) -> Vec<JoinTree> {
        if mask.count_ones() == 1 {
            return vec![JoinTree::Leaf(mask.trailing_zeros() as usize)];
        }
        let mut out = Vec::new();
        let mut sub = (mask - 1) & mask;
        while sub > 0 {
            let rest = mask ^ sub;
            if sub < rest && g.connected(sub) && g.connected(rest) {
                for a in all_trees(g, sub) {
                    for b in all_trees(g, rest) {
                        out.push(JoinTree::Join(Box::new(a.clone()), Box::new(b)));
                    }
                }
            }
            sub = (sub - 1) & mask;
        }
        out
    }

    #[test]
    fn three_relation_example_matches_enumeration() {
        let g = JoinGraph {
            names: leaf_names(3),
            cards: vec![1000.0, 10.0, 100.0],
            edges: vec![(0, 1, 0.01), (0, 2, 1.0), (1, 2, 0.1)],
        };
        let best = g.best_tree().unwrap();
        let oracle = all_trees(&g, 0b111).iter().map(|t| g.tree_cost(t)).fold(f64::INFINITY, f64::min);
        assert_eq!(g.tree_cost(&best), oracle);
        assert_eq!(best.canonical(&g.names), "((a b) c)");
    }

    #[test]
    fn disconnected_graph_is_left_alone() {
        let g = JoinGraph { names: leaf_names(3), cards: vec![1.0, 2.0, 3.0], edges: vec![(0, 1, 0.5)] };
        assert!(g.best_tree().is_none());
    }
}

//! Cardinality propagation and the per-operator LLM fee estimate.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::executor::semantic::{extract_prompt, filter_prompt, group_prompt, join_prompt};
use crate::executor::DataSource;
use crate::models::ModelSpec;
use crate::plan::{Column, JoinMode, NodeId, Operator, PlanNode, Schema, SemType};
use crate::provider::{cosine, token_count, Embedder};
use crate::table::Value;

/// Expected output tokens per call, by operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputTokens {
    pub sem_filter: f64,
    pub sem_extract_per_target: f64,
    pub sem_group: f64,
    pub sem_join: f64,
}

impl Default for OutputTokens {
    fn default() -> Self {
        OutputTokens { sem_filter: 5.0, sem_extract_per_target: 16.0, sem_group: 8.0, sem_join: 5.0 }
    }
}

/// Per-operator quantities that do not depend on the model choice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpEstimate {
    pub node_id: NodeId,
    pub op: String,
    /// Rows (or row pairs for SemJoin) the operator sends to the model.
    pub cardinality: f64,
    /// Input tokens per row, summed over calls made for that row.
    pub input_tokens: f64,
    pub output_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpCost {
    #[serde(flatten)]
    pub estimate: OpEstimate,
    pub model: String,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostEstimate {
    pub ops: Vec<OpCost>,
    pub total_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("MissingAssignment: no model assigned to node {0}")]
pub struct MissingAssignment(pub NodeId);

/// `Cardinality × (|InputToken|·Fee_in + |OutputToken|·Fee_out)`, grouped as
/// token totals times fees so it matches the executor's counters.
pub fn op_cost(e: &OpEstimate, m: &ModelSpec) -> f64 {
    (e.cardinality * e.input_tokens) * m.fee_in + (e.cardinality * e.output_tokens) * m.fee_out
}

/// Key under which a scan's row count is recorded.
pub fn scan_key(op: &Operator) -> Option<String> {
    match op {
        Operator::FileScan { dataset, .. } => Some(dataset.clone()),
        Operator::DbScan { connector, sql_text, .. } => Some(format!("{connector}::{sql_text}")),
        _ => None,
    }
}

const UNKNOWN_ROWS: f64 = 1000.0;

/// Statistics the estimator reads. Column samples come from base datasets,
/// so token estimates do not depend on where an operator sits in the plan.
#[derive(Clone, Default)]
pub struct CostContext {
    pub base_rows: BTreeMap<String, f64>,
    pub samples: BTreeMap<String, Vec<Value>>,
    pub selectivities: BTreeMap<NodeId, f64>,
    pub output_tokens: OutputTokens,
    pub default_selectivity: f64,
    pub embedder: Option<Arc<dyn Embedder>>,
}

impl std::fmt::Debug for CostContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CostContext")
            .field("base_rows", &self.base_rows)
            .field("selectivities", &self.selectivities)
            .field("output_tokens", &self.output_tokens)
            .finish_non_exhaustive()
    }
}

impl CostContext {
    pub fn new() -> Self {
        CostContext { default_selectivity: 0.5, ..Default::default() }
    }

    pub fn with_embedder(mut self, embedder: Option<Arc<dyn Embedder>>) -> Self {
        self.embedder = embedder;
        self
    }

    pub fn with_output_tokens(mut self, t: OutputTokens) -> Self {
        self.output_tokens = t;
        self
    }

    /// Row counts and up to `sample_size` sampled values per column for every
    /// scan in the plan.
    pub fn from_plan(plan: &PlanNode, data: &dyn DataSource, sample_size: usize, seed: u64) -> Result<Self, String> {
        let mut ctx = CostContext::new();
        ctx.add_scans(plan, data, sample_size, seed)?;
        Ok(ctx)
    }

    pub fn add_scans(
        &mut self,
        plan: &PlanNode,
        data: &dyn DataSource,
        sample_size: usize,
        seed: u64,
    ) -> Result<(), String> {
        for node in plan.iter() {
            let Some(key) = scan_key(&node.op) else { continue };
            if self.base_rows.contains_key(&key) {
                continue;
            }
            let table = match &node.op {
                Operator::FileScan { dataset, .. } => data.scan(dataset)?,
                Operator::DbScan { connector, sql_text, .. } => data.query(connector, sql_text)?,
                _ => unreachable!("scan_key only matches scans"),
            };
            self.base_rows.insert(key, table.len() as f64);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut idx = rand::seq::index::sample(&mut rng, table.len(), sample_size.min(table.len())).into_vec();
            idx.sort_unstable();
            for (c, col) in table.schema.columns().iter().enumerate() {
                self.samples
                    .entry(col.name.clone())
                    .or_insert_with(|| idx.iter().map(|i| table.rows[*i][c].clone()).collect());
            }
        }
        Ok(())
    }

    fn sel(&self, id: NodeId, default: f64) -> f64 {
        self.selectivities.get(&id).copied().unwrap_or(default)
    }

    /// Estimated output rows of every node.
    pub fn cardinalities(&self, plan: &PlanNode) -> BTreeMap<NodeId, f64> {
        let mut out = BTreeMap::new();
        self.card(plan, &mut out);
        out
    }

    fn card(&self, node: &PlanNode, out: &mut BTreeMap<NodeId, f64>) -> f64 {
        let kids: Vec<f64> = node.children.iter().map(|c| self.card(c, out)).collect();
        let child = kids.first().copied().unwrap_or(0.0);
        let pair = |d: f64| {
            let (l, r) = (child, kids.get(1).copied().unwrap_or(0.0));
            l * r * self.sel(node.id, d.min(1.0 / l.max(r).max(1.0)))
        };
        let c = match &node.op {
            Operator::FileScan { .. } | Operator::DbScan { .. } => {
                scan_key(&node.op).and_then(|k| self.base_rows.get(&k).copied()).unwrap_or(UNKNOWN_ROWS)
            }
            Operator::Filter { .. } | Operator::SemFilter { .. } => child * self.sel(node.id, self.default_selectivity),
            Operator::Project { .. }
            | Operator::Sort { .. }
            | Operator::SemExtract { .. }
            | Operator::SemGroup { .. }
            | Operator::Script { .. } => child,
            Operator::Limit { k } => child.min(*k as f64),
            Operator::Aggregate { keys, .. } => {
                if keys.is_empty() {
                    1.0
                } else {
                    child * self.sel(node.id, 1.0)
                }
            }
            Operator::Join { mode, .. } | Operator::Merge { mode, .. } => match mode {
                JoinMode::Inner => pair(1.0),
                JoinMode::Left => pair(1.0).max(child),
                JoinMode::Semi | JoinMode::Anti => child * self.sel(node.id, self.default_selectivity),
            },
            Operator::SemJoin { .. } => pair(1.0),
            Operator::Union => kids.iter().sum(),
        };
        out.insert(node.id, c);
        c
    }

    /// Sample values for `cols`, one row per sample index. Columns without
    /// base samples (produced inside the plan) get a placeholder of the
    /// expected extraction length.
    fn sample_rows(&self, cols: &[String]) -> (Schema, Vec<Vec<Value>>) {
        let placeholder = Value::Text("x".repeat((self.output_tokens.sem_extract_per_target * 4.0) as usize));
        let mut uniq: Vec<String> = Vec::new();
        for c in cols {
            if !uniq.contains(c) {
                uniq.push(c.clone());
            }
        }
        let schema =
            Schema::new(uniq.iter().map(|c| Column::new(c.clone(), SemType::Text)).collect()).expect("unique names");
        let n = uniq.iter().filter_map(|c| self.samples.get(c)).map(Vec::len).max().unwrap_or(0).max(1);
        let rows = (0..n)
            .map(|i| {
                uniq.iter()
                    .map(|c| match self.samples.get(c) {
                        Some(v) if !v.is_empty() => v[i % v.len()].clone(),
                        _ => placeholder.clone(),
                    })
                    .collect()
            })
            .collect();
        (schema, rows)
    }

    /// Importance weights `0.5 + cos(row text, predicate)`; uniform without an embedder.
    fn weights(&self, predicate: &str, rows: &[Vec<Value>]) -> Vec<f64> {
        let uniform = vec![1.0; rows.len()];
        let Some(e) = &self.embedder else { return uniform };
        let texts: Vec<String> =
            rows.iter().map(|r| r.iter().map(Value::render).collect::<Vec<_>>().join(" ")).collect();
        let (Ok(q), Ok(vs)) = (e.embed_one(predicate), e.embed(&texts)) else { return uniform };
        vs.iter().map(|v| 0.5 + cosine(&q, v)).collect()
    }

    /// Per-semantic-operator estimates in node-id order.
    pub fn op_estimates(&self, plan: &PlanNode) -> Vec<OpEstimate> {
        let cards = self.cardinalities(plan);
        let mut out = Vec::new();
        for node in plan.semantic_nodes() {
            let input = |k: usize| node.children.get(k).and_then(|c| cards.get(&c.id)).copied().unwrap_or(0.0);
            let ot = &self.output_tokens;
            let (cardinality, input_tokens, output_tokens) = match &node.op {
                Operator::SemFilter { columns, predicate_prompt } => {
                    let (s, rows) = self.sample_rows(columns);
                    let w = self.weights(predicate_prompt, &rows);
                    let t = weighted_mean(
                        &w,
                        rows.iter().map(|r| tokens(&filter_prompt(predicate_prompt, columns, &s, r))),
                    );
                    (input(0), t, ot.sem_filter)
                }
                Operator::SemExtract { source_columns, target_columns, instruction_prompt } => {
                    let (s, rows) = self.sample_rows(source_columns);
                    let w = self.weights(instruction_prompt, &rows);
                    let t: f64 = source_columns
                        .iter()
                        .zip(target_columns)
                        .map(|(src, tgt)| {
                            weighted_mean(
                                &w,
                                rows.iter().map(|r| tokens(&extract_prompt(instruction_prompt, src, tgt, &s, r))),
                            )
                        })
                        .sum();
                    (input(0), t, ot.sem_extract_per_target * target_columns.len() as f64)
                }
                Operator::SemGroup { columns, label_prompt, max_labels, .. } => {
                    let (s, rows) = self.sample_rows(columns);
                    let w = self.weights(label_prompt, &rows);
                    let t = weighted_mean(
                        &w,
                        rows.iter().map(|r| tokens(&group_prompt(label_prompt, *max_labels, columns, &s, r))),
                    );
                    (input(0), t, ot.sem_group)
                }
                Operator::SemJoin { left_cols, right_cols, match_prompt } => {
                    let (ls, lrows) = self.sample_rows(left_cols);
                    let (rs, rrows) = self.sample_rows(right_cols);
                    let n = lrows.len().max(rrows.len());
                    let pairs: Vec<Vec<Value>> = (0..n)
                        .map(|i| [lrows[i % lrows.len()].clone(), rrows[i % rrows.len()].clone()].concat())
                        .collect();
                    let w = self.weights(match_prompt, &pairs);
                    let t = weighted_mean(
                        &w,
                        (0..n).map(|i| {
                            tokens(&join_prompt(
                                match_prompt,
                                left_cols,
                                &ls,
                                &lrows[i % lrows.len()],
                                right_cols,
                                &rs,
                                &rrows[i % rrows.len()],
                            ))
                        }),
                    );
                    (input(0) * input(1), t, ot.sem_join)
                }
                _ => continue,
            };
            out.push(OpEstimate {
                node_id: node.id,
                op: node.kind().name().to_string(),
                cardinality,
                input_tokens,
                output_tokens,
            });
        }
        out
    }
}

fn tokens(s: &str) -> f64 {
    token_count(s) as f64
}

/// Weighted mean computed around the first value, so equal values come out exact.
fn weighted_mean(w: &[f64], xs: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.collect();
    let Some(&x0) = xs.first() else { return 0.0 };
    let (mut num, mut den) = (0.0, 0.0);
    for (x, w) in xs.iter().zip(w) {
        num += w * (x - x0);
        den += w;
    }
    if den > 0.0 {
        x0 + num / den
    } else {
        x0
    }
}

pub fn costs_for(
    estimates: &[OpEstimate],
    assignment: &BTreeMap<NodeId, ModelSpec>,
) -> Result<CostEstimate, MissingAssignment> {
    let mut ops = Vec::with_capacity(estimates.len());
    let mut total = 0.0;
    for e in estimates {
        let m = assignment.get(&e.node_id).ok_or(MissingAssignment(e.node_id))?;
        let cost = op_cost(e, m);
        total += cost;
        ops.push(OpCost { estimate: e.clone(), model: m.model_name.clone(), cost });
    }
    Ok(CostEstimate { ops, total_cost: total })
}

pub fn estimate_cost(
    plan: &PlanNode,
    assignment: &BTreeMap<NodeId, ModelSpec>,
    ctx: &CostContext,
) -> Result<CostEstimate, MissingAssignment> {
    costs_for(&ctx.op_estimates(plan), assignment)
}

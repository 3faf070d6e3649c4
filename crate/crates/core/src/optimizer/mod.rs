//! Cost-based optimization: equivalence rewrites, sampled selectivities,
//! join ordering, and quality-bounded model selection.

pub mod cost;
pub mod joins;
pub mod rules;
pub mod select;
pub mod selectivity;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cost::{estimate_cost, op_cost, CostContext, CostEstimate, MissingAssignment, OpEstimate, OutputTokens};
pub use joins::{order_joins, JoinGraph, JoinOrderTrace, JoinTree};
pub use rules::{apply_rules, apply_rules_traced, RewriteEvent};
pub use select::{plan_quality, select_models, Selection, SelectionStep};
pub use selectivity::{estimate_selectivity, progressive_estimate, SamplingConfig, SelectivityEstimate};

use crate::executor::semantic::Llm;
use crate::executor::{relational, DataSource, Executor, PhysicalPlan};
use crate::models::ModelRegistry;
use crate::plan::{NodeId, Operator, PlanNode, SchemaProvider};
use crate::provider::{ChatProvider, Embedder};
use crate::table::Table;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Largest tolerated relative drop in plan quality.
    pub epsilon: f64,
    pub sampling: SamplingConfig,
    pub output_tokens: OutputTokens,
    /// Rows sampled per column for token estimates.
    pub token_sample_size: usize,
    pub seed: u64,
    pub rewrite: bool,
    pub reorder_joins: bool,
    /// Run eligible SemFilters as embedding, small-model, large-model cascades.
    pub cascade: bool,
    pub cascade_tau: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            epsilon: 0.05,
            sampling: SamplingConfig::default(),
            output_tokens: OutputTokens::default(),
            token_sample_size: 256,
            seed: 7,
            rewrite: true,
            reorder_joins: true,
            cascade: true,
            cascade_tau: 0.0,
        }
    }
}

/// What the optimizer may read while planning.
pub struct OptimizerInputs<'a> {
    pub data: &'a dyn DataSource,
    pub schemas: &'a dyn SchemaProvider,
    pub registry: &'a ModelRegistry,
    pub chat: Option<&'a dyn ChatProvider>,
    pub embedder: Option<Arc<dyn Embedder>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("OptimizerError: {0}")]
pub struct OptimizeError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerTrace {
    pub rewrites: Vec<RewriteEvent>,
    pub selectivities: Vec<SelectivityEstimate>,
    pub join_orders: Vec<JoinOrderTrace>,
    pub model_steps: Vec<SelectionStep>,
    pub initial_quality: f64,
    pub quality: f64,
    pub cost: CostEstimate,
    pub warnings: Vec<String>,
}

impl OptimizerTrace {
    /// Plain-text report with one section per optimizer stage.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "REWRITES");
        if self.rewrites.is_empty() {
            let _ = writeln!(s, "  (none)");
        }
        for r in &self.rewrites {
            let _ = match r {
                RewriteEvent::FilterBelowSemantic { filter, semantic } => {
                    writeln!(s, "  filter #{filter} moved below semantic #{semantic}")
                }
                RewriteEvent::SemanticRaised { node, past } => {
                    let past: Vec<String> = past.iter().map(|p| format!("#{p}")).collect();
                    writeln!(s, "  semantic #{node} raised past {}", past.join(", "))
                }
                RewriteEvent::ExtractSplit { node, new_node, targets } => {
                    writeln!(s, "  extract #{node} split; #{new_node} takes [{}]", targets.join(", "))
                }
            };
        }
        let _ = writeln!(s, "SELECTIVITY");
        for e in &self.selectivities {
            let _ = writeln!(
                s,
                "  #{}: {:.4} (n={}, ±{:.4}){}",
                e.node_id,
                e.selectivity,
                e.sample_size,
                e.half_width,
                e.warning.as_deref().map(|w| format!(" warning: {w}")).unwrap_or_default()
            );
        }
        let _ = writeln!(s, "JOIN-ORDER");
        if self.join_orders.is_empty() {
            let _ = writeln!(s, "  (no join blocks)");
        }
        for j in &self.join_orders {
            let _ = writeln!(
                s,
                "  block #{}: {} (cost {}) -> {} (cost {})",
                j.block_root, j.before, j.cost_before, j.after, j.cost_after
            );
        }
        let _ = writeln!(s, "MODELS");
        for st in &self.model_steps {
            let _ = writeln!(
                s,
                "  #{}: {} -> {} saves {:.6} for quality {:.6} (ratio {:.4}, drop {:.4})",
                st.node_id, st.from, st.to, st.delta_cost, st.delta_quality, st.ratio, st.relative_drop
            );
        }
        for op in &self.cost.ops {
            let _ = writeln!(s, "  #{} {} -> {}", op.estimate.node_id, op.estimate.op, op.model);
        }
        let _ = writeln!(s, "  quality {:.6} (initial {:.6})", self.quality, self.initial_quality);
        let _ = writeln!(s, "COST");
        for op in &self.cost.ops {
            let e = &op.estimate;
            let _ = writeln!(
                s,
                "  #{} rows={} in={} out={} cost={:.8}",
                e.node_id, e.cardinality, e.input_tokens, e.output_tokens, op.cost
            );
        }
        let _ = writeln!(s, "  total {:.8}", self.cost.total_cost);
        for w in &self.warnings {
            let _ = writeln!(s, "WARNING {w}");
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct Optimized {
    pub physical: PhysicalPlan,
    pub trace: OptimizerTrace,
}

fn is_relational(node: &PlanNode) -> bool {
    node.iter().all(|n| !n.kind().is_semantic() && !matches!(n.op, Operator::Script { .. }))
}

/// Runs purely relational subtrees, caching by root id.
struct SubtreeRunner<'a> {
    data: &'a dyn DataSource,
    cache: HashMap<NodeId, Option<Table>>,
}

impl SubtreeRunner<'_> {
    fn run(&mut self, node: &PlanNode) -> Option<Table> {
        if !is_relational(node) {
            return None;
        }
        let data = self.data;
        self.cache
            .entry(node.id)
            .or_insert_with(|| {
                let plan = PhysicalPlan { plan: node.clone(), choices: BTreeMap::new() };
                Executor::new(data).execute(&plan).ok().map(|r| r.table)
            })
            .clone()
    }
}

/// Full pipeline: rewrites, selectivity sampling, join ordering, model
/// selection, cost estimate and physical choices.
pub fn optimize(plan: &PlanNode, inputs: &OptimizerInputs, cfg: &OptimizerConfig) -> Result<Optimized, OptimizeError> {
    let (mut p, rewrites) = if cfg.rewrite { apply_rules_traced(plan) } else { (plan.clone(), Vec::new()) };
    let mut ctx = CostContext::from_plan(&p, inputs.data, cfg.token_sample_size, cfg.seed)
        .map_err(OptimizeError)?
        .with_embedder(inputs.embedder.clone())
        .with_output_tokens(cfg.output_tokens.clone());
    ctx.default_selectivity = cfg.sampling.fallback;
    let mut warnings = Vec::new();
    let mut runner = SubtreeRunner { data: inputs.data, cache: HashMap::new() };

    let cheapest = inputs.registry.cheapest().clone();
    let llm = inputs.chat.map(|provider| Llm { provider, model: &cheapest, parallelism: 4 });
    let mut selectivities = Vec::new();
    for node in p.iter() {
        if !matches!(node.op, Operator::Filter { .. } | Operator::SemFilter { .. }) {
            continue;
        }
        let Some(input) = node.children.first().and_then(|c| runner.run(c)) else { continue };
        let est = estimate_selectivity(node, &input, &cfg.sampling, llm, inputs.embedder.as_deref());
        if let Some(w) = &est.warning {
            warnings.push(format!("selectivity of node {}: {w}", node.id));
        }
        ctx.selectivities.insert(node.id, est.selectivity);
        selectivities.push(est);
    }

    let mut join_orders = Vec::new();
    if cfg.reorder_joins {
        let edge_sel = measure_edges(&p, inputs.schemas, &mut runner);
        let cards = ctx.cardinalities(&p);
        let (q, traces) = order_joins(&p, inputs.schemas, &cards, &edge_sel);
        p = q;
        join_orders = traces;
        set_join_selectivities(&p, inputs.schemas, &edge_sel, &mut ctx);
    }

    let estimates = ctx.op_estimates(&p);
    let selection = select_models(&estimates, inputs.registry, cfg.epsilon);
    let cost = cost::costs_for(&estimates, &selection.assignment).map_err(|e| OptimizeError(e.to_string()))?;
    let has_index = inputs.embedder.is_some();
    let physical =
        PhysicalPlan::with_defaults(p, &selection.assignment, inputs.registry, has_index, cfg.cascade_tau, cfg.cascade);
    Ok(Optimized {
        physical,
        trace: OptimizerTrace {
            rewrites,
            selectivities,
            join_orders,
            model_steps: selection.steps,
            initial_quality: selection.initial_quality,
            quality: selection.quality,
            cost,
            warnings,
        },
    })
}

/// Exact selectivity of each join edge whose relations are relational:
/// matching pairs over all pairs.
fn measure_edges(
    plan: &PlanNode,
    schemas: &dyn SchemaProvider,
    runner: &mut SubtreeRunner,
) -> BTreeMap<(String, String), f64> {
    let mut out = BTreeMap::new();
    for node in plan.iter() {
        let Some(block) = joins::join_block(node, schemas) else { continue };
        let mut by_pair: BTreeMap<(usize, usize), Vec<crate::plan::Expr>> = BTreeMap::new();
        for (a, b, e) in &block.conjuncts {
            by_pair.entry((*a, *b)).or_default().push(e.clone());
        }
        for ((a, b), conds) in by_pair {
            let key = joins::pair_key(&block.names[a], &block.names[b]);
            if out.contains_key(&key) {
                continue;
            }
            let (Some(l), Some(r)) = (runner.run(&block.relations[a]), runner.run(&block.relations[b])) else {
                continue;
            };
            let pairs = l.len() as f64 * r.len() as f64;
            if pairs == 0.0 || pairs > 1e7 {
                continue;
            }
            let cond = crate::plan::Expr::conjunction(conds).expect("at least one conjunct");
            if let Ok(j) = relational::join(l, r, crate::plan::JoinMode::Inner, &cond) {
                out.insert(key, j.len() as f64 / pairs);
            }
        }
    }
    out
}

/// Per-join selectivity: product of the edges its condition covers.
fn set_join_selectivities(
    plan: &PlanNode,
    schemas: &dyn SchemaProvider,
    edge_sel: &BTreeMap<(String, String), f64>,
    ctx: &mut CostContext,
) {
    for node in plan.iter() {
        let Some(block) = joins::join_block(node, schemas) else { continue };
        let Operator::Join { condition, .. } = &node.op else { continue };
        let own: Vec<&crate::plan::Expr> = condition.conjuncts();
        let mut pairs: Vec<(usize, usize)> =
            block.conjuncts.iter().filter(|(_, _, e)| own.contains(&e)).map(|(a, b, _)| (*a, *b)).collect();
        pairs.sort_unstable();
        pairs.dedup();
        let sels: Option<Vec<f64>> = pairs
            .iter()
            .map(|(a, b)| edge_sel.get(&joins::pair_key(&block.names[*a], &block.names[*b])).copied())
            .collect();
        if let Some(s) = sels.filter(|s| !s.is_empty()) {
            ctx.selectivities.insert(node.id, s.iter().product());
        }
    }
}

//! Bottom-up execution of physical plans over in-memory tables.

pub mod relational;
pub mod semantic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::models::{ModelRegistry, ModelSpec};
use crate::plan::{NodeId, Operator, PlanNode, Schema, SemType};
use crate::provider::{ChatProvider, Embedder};
use crate::table::{Table, Value};

pub use semantic::{CascadeConfig, StageTrace};
use semantic::{Llm, SemOutput};

/// Physical implementation of a semantic operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "implementation", rename_all = "snake_case")]
pub enum SemImpl {
    PerRowLlm,
    VectorIndex { tau: f64 },
    Cascade(CascadeConfig),
}

impl SemImpl {
    pub fn name(&self) -> &'static str {
        match self {
            SemImpl::PerRowLlm => "per_row_llm",
            SemImpl::VectorIndex { .. } => "vector_index",
            SemImpl::Cascade(_) => "cascade",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalChoice {
    pub model: ModelSpec,
    #[serde(flatten)]
    pub implementation: SemImpl,
}

/// A logical plan plus model and implementation choices for its semantic nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalPlan {
    pub plan: PlanNode,
    pub choices: BTreeMap<NodeId, PhysicalChoice>,
}

impl PhysicalPlan {
    /// Every semantic node runs row by row on `model`.
    pub fn per_row(plan: PlanNode, model: &ModelSpec) -> Self {
        let choices = plan
            .semantic_nodes()
            .iter()
            .map(|n| (n.id, PhysicalChoice { model: model.clone(), implementation: SemImpl::PerRowLlm }))
            .collect();
        PhysicalPlan { plan, choices }
    }

    /// Physical choices for a model assignment. SemFilter nodes above the
    /// cheapest tier run as a cascade when an embedding index is available
    /// and the registry has at least two tiers.
    pub fn with_defaults(
        plan: PlanNode,
        assignments: &BTreeMap<NodeId, ModelSpec>,
        registry: &ModelRegistry,
        has_index: bool,
        cascade_tau: f64,
        allow_cascade: bool,
    ) -> Self {
        let mut choices = BTreeMap::new();
        for n in plan.semantic_nodes() {
            let Some(model) = assignments.get(&n.id) else { continue };
            let cascade = allow_cascade
                && has_index
                && registry.len() >= 2
                && matches!(n.op, Operator::SemFilter { .. })
                && model.tier > registry.cheapest().tier;
            let implementation = if cascade {
                SemImpl::Cascade(CascadeConfig {
                    tau: cascade_tau,
                    small: registry.cheapest().clone(),
                    large: model.clone(),
                    verify_positives: true,
                })
            } else {
                SemImpl::PerRowLlm
            };
            choices.insert(n.id, PhysicalChoice { model: model.clone(), implementation });
        }
        PhysicalPlan { plan, choices }
    }

    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!(self
            .choices
            .iter()
            .map(|(id, c)| (id.to_string(), serde_json::to_value(c).expect("serializable")))
            .collect::<serde_json::Map<_, _>>())
    }
}

/// Where scans read their rows from.
pub trait DataSource: Sync {
    fn scan(&self, dataset: &str) -> Result<Table, String>;

    fn query(&self, connector: &str, sql: &str) -> Result<Table, String>;
}

impl DataSource for Catalog {
    fn scan(&self, dataset: &str) -> Result<Table, String> {
        self.scan_dataset(dataset).map_err(|e| e.to_string())
    }

    fn query(&self, connector: &str, sql: &str) -> Result<Table, String> {
        self.run_sql(connector, sql).map_err(|e| e.to_string())
    }
}

impl DataSource for BTreeMap<String, Table> {
    fn scan(&self, dataset: &str) -> Result<Table, String> {
        self.get(dataset).cloned().ok_or_else(|| format!("UnknownDataset('{dataset}')"))
    }

    fn query(&self, connector: &str, _sql: &str) -> Result<Table, String> {
        Err(format!("ConnectorError: {connector}: no SQL connector in an in-memory source"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("ExecutionError at node {node_id}: {message}")]
pub struct ExecutionError {
    pub node_id: NodeId,
    pub message: String,
}

/// Runtime counters for one operator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OpTrace {
    pub node_id: NodeId,
    pub op: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub implementation: Option<String>,
    pub rows_in: usize,
    pub rows_out: usize,
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost: f64,
    pub parse_warnings: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<StageTrace>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    /// Post-order: children before parents.
    pub ops: Vec<OpTrace>,
    pub total_calls: u64,
    pub total_cost: f64,
}

#[derive(Debug, Clone)]
pub struct ExecutionResult {
    pub table: Table,
    pub trace: ExecutionTrace,
}

pub struct Executor<'a> {
    data: &'a dyn DataSource,
    chat: Option<&'a dyn ChatProvider>,
    embedder: Option<&'a dyn Embedder>,
    parallelism: usize,
}

fn coerce(v: Value, ty: SemType) -> Value {
    if v.is_null() || v.conforms_to(ty) {
        return match (v, ty) {
            (Value::Int(i), SemType::Real) => Value::Real(i as f64),
            (v, _) => v,
        };
    }
    Value::parse_as(&v.render(), ty).unwrap_or(Value::Null)
}

/// Renames nothing: checks that the result has the declared columns and
/// converts values to the declared types.
fn conform(table: Table, declared: &Schema) -> Result<Table, String> {
    let got: Vec<&str> = table.schema.names().collect();
    let want: Vec<&str> = declared.names().collect();
    if got != want {
        return Err(format!("query returned columns [{}], declared [{}]", got.join(", "), want.join(", ")));
    }
    let rows = table
        .rows
        .into_iter()
        .map(|r| r.into_iter().zip(declared.columns()).map(|(v, c)| coerce(v, c.ty)).collect())
        .collect();
    Ok(Table { schema: declared.clone(), rows })
}

impl<'a> Executor<'a> {
    pub fn new(data: &'a dyn DataSource) -> Self {
        Executor { data, chat: None, embedder: None, parallelism: 4 }
    }

    pub fn with_chat(mut self, chat: &'a dyn ChatProvider) -> Self {
        self.chat = Some(chat);
        self
    }

    pub fn with_embedder(mut self, embedder: &'a dyn Embedder) -> Self {
        self.embedder = Some(embedder);
        self
    }

    pub fn with_parallelism(mut self, n: usize) -> Self {
        self.parallelism = n.max(1);
        self
    }

    pub fn execute(&self, plan: &PhysicalPlan) -> Result<ExecutionResult, ExecutionError> {
        let mut ops = Vec::new();
        let table = self.run(&plan.plan, plan, &mut ops)?;
        let total_calls = ops.iter().map(|o| o.calls).sum();
        let total_cost = ops.iter().map(|o| o.cost).sum();
        Ok(ExecutionResult { table, trace: ExecutionTrace { ops, total_calls, total_cost } })
    }

    fn llm<'b>(&'b self, node: NodeId, model: &'b ModelSpec) -> Result<Llm<'b>, ExecutionError> {
        let provider =
            self.chat.ok_or_else(|| ExecutionError { node_id: node, message: "no chat provider configured".into() })?;
        Ok(Llm { provider, model, parallelism: self.parallelism })
    }

    fn run(&self, node: &PlanNode, plan: &PhysicalPlan, ops: &mut Vec<OpTrace>) -> Result<Table, ExecutionError> {
        let mut inputs = Vec::with_capacity(node.children.len());
        for c in &node.children {
            inputs.push(self.run(c, plan, ops)?);
        }
        let err = |message: String| ExecutionError { node_id: node.id, message };
        let rows_in = inputs.iter().map(Table::len).sum();
        let mut trace = OpTrace { node_id: node.id, op: node.kind().name().to_string(), rows_in, ..Default::default() };
        let mut take = |n: usize| -> Result<Vec<Table>, ExecutionError> {
            if inputs.len() != n {
                return Err(err(format!("expected {n} inputs, got {}", inputs.len())));
            }
            Ok(std::mem::take(&mut inputs))
        };

        let table = match &node.op {
            Operator::FileScan { dataset, .. } => self.data.scan(dataset).map_err(err)?,
            Operator::DbScan { connector, sql_text, columns } => {
                let t = self.data.query(connector, sql_text).map_err(err)?;
                match columns {
                    Some(s) => conform(t, s).map_err(err)?,
                    None => t,
                }
            }
            Operator::Filter { predicate } => relational::filter(take(1)?.remove(0), predicate).map_err(err)?,
            Operator::Project { items } => relational::project(&take(1)?[0], items).map_err(err)?,
            Operator::Join { mode, condition } | Operator::Merge { mode, condition } => {
                let mut t = take(2)?;
                let right = t.pop().expect("two inputs");
                let left = t.pop().expect("two inputs");
                relational::join(left, right, *mode, condition).map_err(err)?
            }
            Operator::Aggregate { keys, aggs } => relational::aggregate(&take(1)?[0], keys, aggs).map_err(err)?,
            Operator::Union => {
                let t = std::mem::take(&mut inputs);
                if t.len() < 2 {
                    return Err(err("Union needs at least two inputs".into()));
                }
                relational::union(t).map_err(err)?
            }
            Operator::Sort { keys, directions } => {
                relational::sort(take(1)?.remove(0), keys, directions).map_err(err)?
            }
            Operator::Limit { k } => relational::limit(take(1)?.remove(0), *k),
            Operator::Script { .. } => return Err(err("Script operator cannot be executed".into())),
            op => {
                let choice = plan
                    .choices
                    .get(&node.id)
                    .ok_or_else(|| err(format!("no model assigned to {}", node.kind().name())))?;
                trace.implementation = Some(choice.implementation.name().to_string());
                let arity = if matches!(op, Operator::SemJoin { .. }) { 2 } else { 1 };
                let t = take(arity)?;
                let out = self.run_semantic(node.id, op, choice, &t)?;
                trace.parse_warnings = out.parse_warnings;
                for s in &out.stages {
                    trace.calls += s.calls;
                    trace.input_tokens += s.input_tokens;
                    trace.output_tokens += s.output_tokens;
                    trace.cost += s.cost;
                }
                trace.stages = out.stages;
                out.table
            }
        };
        trace.rows_out = table.len();
        ops.push(trace);
        Ok(table)
    }

    fn run_semantic(
        &self,
        id: NodeId,
        op: &Operator,
        choice: &PhysicalChoice,
        t: &[Table],
    ) -> Result<SemOutput, ExecutionError> {
        let err = |message: String| ExecutionError { node_id: id, message };
        let unsupported = || err(format!("{} is not supported for {}", choice.implementation.name(), op.kind().name()));
        match (op, &choice.implementation) {
            (Operator::SemFilter { columns, predicate_prompt }, SemImpl::PerRowLlm) => {
                semantic::per_row_filter(&t[0], columns, predicate_prompt, self.llm(id, &choice.model)?).map_err(err)
            }
            (Operator::SemFilter { columns, predicate_prompt }, SemImpl::VectorIndex { tau }) => {
                let e = self.embedder.ok_or_else(|| err("no embedder configured".into()))?;
                semantic::vector_filter(&t[0], columns, predicate_prompt, *tau, e).map_err(err)
            }
            (Operator::SemFilter { columns, predicate_prompt }, SemImpl::Cascade(cfg)) => {
                let provider = self.llm(id, &cfg.large)?.provider;
                semantic::cascade_filter(
                    &t[0],
                    columns,
                    predicate_prompt,
                    cfg,
                    provider,
                    self.embedder,
                    self.parallelism,
                )
                .map_err(err)
            }
            (Operator::SemExtract { source_columns, target_columns, instruction_prompt }, SemImpl::PerRowLlm) => {
                semantic::per_row_extract(
                    &t[0],
                    source_columns,
                    target_columns,
                    instruction_prompt,
                    self.llm(id, &choice.model)?,
                )
                .map_err(err)
            }
            (Operator::SemGroup { columns, label_prompt, max_labels, label_column }, SemImpl::PerRowLlm) => {
                semantic::per_row_group(
                    &t[0],
                    columns,
                    label_prompt,
                    *max_labels,
                    label_column,
                    self.llm(id, &choice.model)?,
                )
                .map_err(err)
            }
            (Operator::SemJoin { left_cols, right_cols, match_prompt }, SemImpl::PerRowLlm) => {
                semantic::per_row_join(&t[0], &t[1], left_cols, right_cols, match_prompt, self.llm(id, &choice.model)?)
                    .map_err(err)
            }
            _ => Err(unsupported()),
        }
    }
}

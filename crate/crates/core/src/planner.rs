//! The agent loop: dataset selection, two-step plan generation, majority
//! validation and feedback-driven retries.

use std::sync::Arc;

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::catalog::{Catalog, DatasetProfile, Level, SearchHit};
use crate::executor::{ExecutionTrace, Executor, PhysicalPlan};
use crate::memory::{render_items, AgentRole, MemoryStore, ShortTermRecord};
use crate::models::ModelRegistry;
use crate::optimizer::{optimize, OptimizerConfig, OptimizerInputs, OptimizerTrace};
use crate::plan::json::plan_document;
use crate::plan::{parse_plan, serialize_plan_pretty, validate_grammar, ErrorCategory, NodeId, PlanNode};
use crate::prompts::{PromptError, Prompts};
use crate::provider::{cosine, ChatProvider, ChatRequest, Embedder, ProviderError};
use crate::table::Table;

/// Operator reference handed to the planning and manipulation agents.
pub const OPERATORS: &str = "\
- FileScan {dataset, format}: rows of a catalog dataset; unstructured text yields (segment_id, text).
- DBScan {connector, sql_text, columns?}: rows returned by SQL on a database connector; columns declares [{name, type}].
- Filter {predicate}: keeps rows where the expression is true.
- Project {items: [{name, expr}]}: computes output columns.
- Join {mode, condition} / Merge {mode, condition}: mode is inner, left, semi or anti; input column names must be disjoint.
- Aggregate {keys, aggs: [{func, column, out_name}]}: func is sum, avg, min, max or count.
- Union {}: concatenates inputs with equal schemas.
- Sort {keys, directions}: directions are asc or desc.
- Limit {k}: first k rows.
- SemExtract {source_columns, target_columns, instruction_prompt}: a model extracts target values from text.
- SemFilter {columns, predicate_prompt}: a model keeps rows that satisfy a natural-language condition.
- SemGroup {columns, label_prompt, max_labels, label_column}: a model assigns a label to each row.
- SemJoin {left_cols, right_cols, match_prompt}: a model decides which row pairs match.
Expressions use column names, literals, + - * /, == != < <= > >=, and, or, not.";

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub max_iterations: u32,
    /// Validators of each kind; twice this many verdicts are counted.
    pub n_per_kind: usize,
    /// Extra manipulation calls after an undecodable answer.
    pub reask_budget: u32,
    pub knowledge_k: usize,
    /// Model for agent and validator calls; the top tier when unset.
    pub agent_model: Option<String>,
    /// Datasets chosen by the fallback when no model is available.
    pub fallback_k: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            max_iterations: 5,
            n_per_kind: 3,
            reask_budget: 2,
            knowledge_k: 5,
            agent_model: None,
            fallback_k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlannerError {
    #[error("PreconditionError: {0}")]
    Precondition(String),
    #[error("NoCandidate: no dataset was selected for the question")]
    NoCandidate,
    #[error("DecodeError: {0}")]
    Decode(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskContext {
    pub task_id: String,
    pub nl_query: String,
    pub selected_profiles: Vec<DatasetProfile>,
    pub knowledge: Vec<SearchHit>,
    pub iteration: u32,
    pub max_iterations: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidatorKind {
    Completeness,
    Guideline,
}

impl ValidatorKind {
    pub fn name(self) -> &'static str {
        match self {
            ValidatorKind::Completeness => "completeness",
            ValidatorKind::Guideline => "guideline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationVerdict {
    pub validator_kind: ValidatorKind,
    pub approved: bool,
    /// Empty iff approved.
    pub correction: String,
}

impl ValidationVerdict {
    /// Reads `APPROVE` or `REJECT: reason`; anything else is a rejection
    /// whose correction is the whole answer.
    pub fn parse(kind: ValidatorKind, answer: &str) -> Self {
        let text = answer.trim();
        let first = text.split(|c: char| !c.is_alphabetic()).find(|w| !w.is_empty()).unwrap_or("").to_ascii_uppercase();
        if matches!(first.as_str(), "APPROVE" | "APPROVED" | "YES") {
            return ValidationVerdict { validator_kind: kind, approved: true, correction: String::new() };
        }
        let reason = if first == "REJECT" || first == "REJECTED" {
            text[text.to_ascii_uppercase().find(&first).map_or(0, |i| i + first.len())..]
                .trim_start_matches([':', ' ', '-'])
                .trim()
        } else {
            text
        };
        let reason = if reason.is_empty() { "the plan was rejected without a reason" } else { reason };
        ValidationVerdict { validator_kind: kind, approved: false, correction: reason.to_string() }
    }

    /// Correction text as recorded in memory.
    pub fn record_text(&self) -> String {
        format!("[{}] {}", self.validator_kind.name(), self.correction)
    }
}

/// Strict majority: more than half of all verdicts approve.
pub fn majority(approvals: usize, total: usize) -> bool {
    2 * approvals > total
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationOutcome {
    pub accepted: bool,
    pub verdicts: Vec<ValidationVerdict>,
    /// Correction texts of the non-approving verdicts, in validator order.
    pub corrections: Vec<String>,
}

/// Successful answer with everything needed to explain it.
#[derive(Debug, Clone)]
pub struct AnswerTable {
    pub task_id: String,
    pub iterations: u32,
    pub table: Table,
    pub plan: PlanNode,
    pub physical: PhysicalPlan,
    pub optimizer: OptimizerTrace,
    pub execution: ExecutionTrace,
    pub datasets: Vec<String>,
    /// Feedback recorded by earlier iterations, oldest first.
    pub records: Vec<ShortTermRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureReport {
    pub task_id: String,
    pub query: String,
    pub iterations: u32,
    pub last_plan: Option<PlanNode>,
    pub records: Vec<ShortTermRecord>,
    pub transcript: String,
}

impl FailureReport {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "task_id": self.task_id,
            "query": self.query,
            "iterations": self.iterations,
            "last_plan": self.last_plan.as_ref().map(plan_document),
            "records": self.records,
            "transcript": self.transcript,
        })
    }
}

impl std::fmt::Display for FailureReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "FailureReport: task {} failed after {} iteration(s)", self.task_id, self.iterations)?;
        writeln!(f, "query: {}", self.query)?;
        write!(f, "{}", if self.transcript.is_empty() { "(no memory records)" } else { &self.transcript })
    }
}

impl std::error::Error for FailureReport {}

/// Stable id derived from the question text.
pub fn task_id(query: &str) -> String {
    let digest = Sha256::digest(query.trim().as_bytes());
    format!("task-{}", &hex::encode(digest)[..12])
}

/// The JSON object in a model answer: fences and surrounding prose dropped.
pub fn extract_json(text: &str, open: char, close: char) -> Option<&str> {
    let start = text.find(open)?;
    let end = text.rfind(close)?;
    (end > start).then(|| &text[start..=end])
}

/// Picks datasets without a model: the `k` profiles most similar to the
/// question, comparing against name and summary.
pub fn fallback_selection(
    query: &str,
    profiles: &[DatasetProfile],
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Vec<DatasetProfile>, ProviderError> {
    let q = embedder.embed_one(query)?;
    let texts: Vec<String> = profiles.iter().map(|p| format!("{} {}", p.name.replace('_', " "), p.summary)).collect();
    let vs = embedder.embed(&texts)?;
    let scored: Vec<(usize, f64)> = vs.iter().enumerate().map(|(i, v)| (i, cosine(&q, v))).collect();
    Ok(crate::catalog::rank(scored, k).into_iter().map(|(i, _)| profiles[i].clone()).collect())
}

pub struct Planner<'a> {
    pub catalog: &'a Catalog,
    pub memory: &'a MemoryStore,
    pub registry: &'a ModelRegistry,
    pub chat: Option<&'a dyn ChatProvider>,
    pub prompts: &'a Prompts,
    pub config: PlannerConfig,
    pub optimizer: OptimizerConfig,
    /// Skip optimization and run plans with per-row top-tier semantics.
    pub optimize: bool,
}

fn render_hits(hits: &[SearchHit]) -> String {
    if hits.is_empty() {
        return "(none)".to_string();
    }
    hits.iter().map(|h| format!("[{}] {}", h.dataset, h.text)).collect::<Vec<_>>().join("\n")
}

fn render_profiles(profiles: &[DatasetProfile]) -> String {
    profiles.iter().map(DatasetProfile::prompt_text).collect::<Vec<_>>().join("\n")
}

impl<'a> Planner<'a> {
    pub fn new(
        catalog: &'a Catalog,
        memory: &'a MemoryStore,
        registry: &'a ModelRegistry,
        prompts: &'a Prompts,
    ) -> Self {
        Planner {
            catalog,
            memory,
            registry,
            chat: None,
            prompts,
            config: PlannerConfig::default(),
            optimizer: OptimizerConfig::default(),
            optimize: true,
        }
    }

    pub fn with_chat(mut self, chat: &'a dyn ChatProvider) -> Self {
        self.chat = Some(chat);
        self
    }

    pub fn with_config(mut self, config: PlannerConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_optimizer(mut self, config: OptimizerConfig, enabled: bool) -> Self {
        self.optimizer = config;
        self.optimize = enabled;
        self
    }

    fn agent_model(&self) -> String {
        self.config.agent_model.clone().unwrap_or_else(|| self.registry.top().model_name.clone())
    }

    fn ask(&self, prompt: String) -> Result<String, PlannerError> {
        let chat = self.chat.ok_or_else(|| PlannerError::Precondition("no chat provider configured".into()))?;
        Ok(chat.chat(&ChatRequest::new(self.agent_model(), prompt))?.text)
    }

    fn memory_text(&self, role: AgentRole, task_id: &str, query: &str) -> String {
        match self.memory.retrieve_for_agent(role, task_id, query) {
            Ok(items) => render_items(&items),
            Err(e) => {
                log::warn!("memory retrieval for {} failed: {e}", role.name());
                render_items(&[])
            }
        }
    }

    fn knowledge(&self, query: &str, level: Level) -> Vec<SearchHit> {
        self.catalog.search_text(query, self.config.knowledge_k, Some(level)).unwrap_or_else(|e| {
            log::warn!("knowledge retrieval failed: {e}");
            Vec::new()
        })
    }

    /// Datasets the planning agent needs. Without a provider, or when the
    /// provider fails, the embedding fallback decides.
    pub fn select_datasets(&self, query: &str, task_id: &str) -> Result<Vec<DatasetProfile>, PlannerError> {
        let profiles = self.catalog.profiles();
        if profiles.is_empty() {
            return Err(PlannerError::Precondition("no dataset profiles registered; run profiling first".into()));
        }
        if profiles.len() == 1 {
            return Ok(profiles);
        }
        let fallback = || -> Result<Vec<DatasetProfile>, PlannerError> {
            Ok(fallback_selection(query, &profiles, self.catalog.embedder().as_ref(), self.config.fallback_k)?)
        };
        if self.chat.is_none() {
            return fallback();
        }
        let tools: Vec<String> = self
            .catalog
            .describe_all()
            .iter()
            .map(|d| serde_json::to_string(d).expect("descriptions serialize"))
            .collect();
        let prompt = self.prompts.render(
            "select_datasets",
            &[
                ("task", query),
                ("profiles", &render_profiles(&profiles)),
                ("tools", &tools.join("\n")),
                ("memory", &self.memory_text(AgentRole::Profiling, task_id, query)),
            ],
        )?;
        let answer = match self.ask(prompt) {
            Ok(a) => a,
            Err(PlannerError::Provider(e)) => {
                log::warn!("dataset selection model unavailable ({e}); using embedding fallback");
                return fallback();
            }
            Err(e) => return Err(e),
        };
        let names: Vec<String> =
            extract_json(&answer, '[', ']').and_then(|j| serde_json::from_str::<Vec<String>>(j).ok()).unwrap_or_else(
                || answer.split([',', '\n']).map(|s| s.trim().trim_matches(['"', '-', ' ']).to_string()).collect(),
            );
        let chosen: Vec<DatasetProfile> =
            profiles.iter().filter(|p| names.iter().any(|n| n == &p.name)).cloned().collect();
        if chosen.is_empty() {
            return Err(PlannerError::NoCandidate);
        }
        Ok(chosen)
    }

    /// Planning agent writes a sketch; manipulation agent turns it into a
    /// plan document. Undecodable plans are recorded and re-asked.
    pub fn generate_plan(&self, ctx: &TaskContext) -> Result<PlanNode, PlannerError> {
        if ctx.nl_query.trim().is_empty() {
            return Err(PlannerError::Precondition("the question is empty".into()));
        }
        if ctx.selected_profiles.is_empty() {
            return Err(PlannerError::Precondition("no datasets selected".into()));
        }
        let profiles = render_profiles(&ctx.selected_profiles);
        let sketch = self.ask(self.prompts.render(
            "planning",
            &[
                ("task", &ctx.nl_query),
                ("profiles", &profiles),
                ("operators", OPERATORS),
                ("knowledge", &render_hits(&ctx.knowledge)),
                ("memory", &self.memory_text(AgentRole::Planning, &ctx.task_id, &ctx.nl_query)),
            ],
        )?)?;
        let fine = render_hits(&self.knowledge(&ctx.nl_query, Level::Fine));
        let memory = self.memory_text(AgentRole::Manipulation, &ctx.task_id, &ctx.nl_query);
        let mut reask = String::new();
        let mut last = String::new();
        for _ in 0..=self.config.reask_budget {
            let answer = self.ask(self.prompts.render(
                "manipulation",
                &[
                    ("task", &ctx.nl_query),
                    ("sketch", sketch.trim()),
                    ("profiles", &profiles),
                    ("operators", OPERATORS),
                    ("knowledge", &fine),
                    ("memory", &memory),
                    ("reask", &reask),
                ],
            )?)?;
            match parse_plan(extract_json(&answer, '{', '}').unwrap_or(&answer)) {
                Ok(plan) => return Ok(plan),
                Err(e) => {
                    last = e.to_string();
                    let node_id = None;
                    self.record(&ctx.task_id, ctx.iteration, ErrorCategory::Grammar, &last, node_id);
                    reask = format!("Your previous plan could not be decoded: {last}. Emit a corrected plan document.");
                }
            }
        }
        Err(PlannerError::Decode(last))
    }

    fn record(&self, task_id: &str, iteration: u32, category: ErrorCategory, message: &str, node_id: Option<NodeId>) {
        let r = ShortTermRecord { task_id: task_id.into(), iteration, category, message: message.into(), node_id };
        if let Err(e) = self.memory.record(r) {
            log::warn!("cannot record feedback: {e}");
        }
    }

    fn record_classified(&self, task_id: &str, iteration: u32, message: &str, node_id: Option<NodeId>) {
        if let Err(e) = self.memory.record_message(task_id, iteration, message, node_id) {
            log::warn!("cannot record feedback: {e}");
        }
    }

    /// Runs `n_per_kind` validators of each kind concurrently and accepts on
    /// a strict majority. Rejections are recorded to memory.
    pub fn validate_plan(&self, plan: &PlanNode, ctx: &TaskContext) -> Result<ValidationOutcome, PlannerError> {
        let plan_text = serialize_plan_pretty(plan);
        let profiles = render_profiles(&ctx.selected_profiles);
        let knowledge = render_hits(&ctx.knowledge);
        let completeness = self.prompts.render(
            "validate_completeness",
            &[("task", &ctx.nl_query), ("profiles", &profiles), ("plan", &plan_text)],
        )?;
        let guideline = self.prompts.render(
            "validate_guideline",
            &[("task", &ctx.nl_query), ("knowledge", &knowledge), ("plan", &plan_text)],
        )?;
        let n = self.config.n_per_kind;
        let jobs: Vec<(ValidatorKind, &String)> = std::iter::repeat_n((ValidatorKind::Completeness, &completeness), n)
            .chain(std::iter::repeat_n((ValidatorKind::Guideline, &guideline), n))
            .collect();
        let verdicts: Vec<ValidationVerdict> = std::thread::scope(|s| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|(kind, prompt)| {
                    let kind = *kind;
                    s.spawn(move || match self.ask((*prompt).clone()) {
                        Ok(answer) => ValidationVerdict::parse(kind, &answer),
                        Err(e) => {
                            ValidationVerdict { validator_kind: kind, approved: false, correction: e.to_string() }
                        }
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("validator thread panicked")).collect()
        });
        let approvals = verdicts.iter().filter(|v| v.approved).count();
        let accepted = majority(approvals, verdicts.len());
        let corrections: Vec<String> =
            verdicts.iter().filter(|v| !v.approved).map(ValidationVerdict::record_text).collect();
        if !accepted {
            for c in &corrections {
                self.record_classified(&ctx.task_id, ctx.iteration, c, None);
            }
        }
        Ok(ValidationOutcome { accepted, verdicts, corrections })
    }

    /// Optimizes (unless disabled) and executes a validated plan.
    pub fn execute(
        &self,
        plan: &PlanNode,
    ) -> Result<(PhysicalPlan, OptimizerTrace, ExecutionTrace, Table), ExecutionFailure> {
        let embedder: Arc<dyn Embedder> = self.catalog.embedder().clone();
        let inputs = OptimizerInputs {
            data: self.catalog,
            schemas: self.catalog,
            registry: self.registry,
            chat: self.chat,
            embedder: Some(embedder.clone()),
        };
        let mut cfg = self.optimizer.clone();
        if !self.optimize {
            cfg.rewrite = false;
            cfg.reorder_joins = false;
            cfg.cascade = false;
            cfg.epsilon = 0.0;
        }
        let optimized =
            optimize(plan, &inputs, &cfg).map_err(|e| ExecutionFailure { node_id: None, message: e.to_string() })?;
        let mut executor = Executor::new(self.catalog).with_embedder(embedder.as_ref());
        if let Some(chat) = self.chat {
            executor = executor.with_chat(chat);
        }
        let result = executor
            .execute(&optimized.physical)
            .map_err(|e| ExecutionFailure { node_id: Some(e.node_id), message: e.to_string() })?;
        Ok((optimized.physical, optimized.trace, result.trace, result.table))
    }

    /// The full loop. Every failure is recorded and retried until the
    /// iteration budget runs out.
    pub fn run_task(&self, query: &str) -> Result<AnswerTable, FailureReport> {
        let task_id = task_id(query);
        let mut last_plan = None;
        let mut iterations = 0;
        if let Err(e) = self.memory.register_task(&task_id, query) {
            log::warn!("cannot register task: {e}");
        }
        let fail = |iterations: u32, last_plan: Option<PlanNode>, message: Option<String>| {
            if let Some(m) = message {
                self.record_classified(&task_id, iterations.max(1), &m, None);
            }
            let transcript = self.memory.transcript(&task_id);
            let records: Vec<ShortTermRecord> = self
                .memory
                .buffer()
                .into_iter()
                .filter(|r| r.task_id == task_id)
                .chain(self.memory.short_term(&task_id))
                .collect();
            self.finish(&task_id);
            FailureReport {
                task_id: task_id.clone(),
                query: query.to_string(),
                iterations,
                last_plan,
                transcript,
                records,
            }
        };
        if query.trim().is_empty() {
            return Err(fail(0, None, Some("PreconditionError: the question is empty".into())));
        }
        for iteration in 1..=self.config.max_iterations {
            iterations = iteration;
            let selected = match self.select_datasets(query, &task_id) {
                Ok(s) => s,
                Err(PlannerError::Precondition(m)) => {
                    return Err(fail(iteration, last_plan, Some(format!("PreconditionError: {m}"))))
                }
                Err(e) => {
                    self.record_classified(&task_id, iteration, &e.to_string(), None);
                    continue;
                }
            };
            let ctx = TaskContext {
                task_id: task_id.clone(),
                nl_query: query.to_string(),
                selected_profiles: selected,
                knowledge: self.knowledge(query, Level::Coarse),
                iteration,
                max_iterations: self.config.max_iterations,
            };
            let plan = match self.generate_plan(&ctx) {
                Ok(p) => p,
                // already recorded per attempt
                Err(PlannerError::Decode(_)) => continue,
                Err(PlannerError::Precondition(m)) => {
                    return Err(fail(iteration, last_plan, Some(format!("PreconditionError: {m}"))))
                }
                Err(e) => {
                    self.record_classified(&task_id, iteration, &e.to_string(), None);
                    continue;
                }
            };
            last_plan = Some(plan.clone());
            let errors = validate_grammar(&plan, self.catalog);
            if !errors.is_empty() {
                for e in &errors {
                    self.record(&task_id, iteration, e.category, &e.to_string(), Some(e.node_id));
                }
                continue;
            }
            match self.validate_plan(&plan, &ctx) {
                Ok(v) if v.accepted => {}
                Ok(_) => continue,
                Err(e) => {
                    self.record_classified(&task_id, iteration, &e.to_string(), None);
                    continue;
                }
            }
            match self.execute(&plan) {
                Ok((physical, optimizer, execution, table)) => {
                    let records = self.memory.short_term(&task_id);
                    self.finish(&task_id);
                    return Ok(AnswerTable {
                        task_id: task_id.clone(),
                        iterations: iteration,
                        table,
                        plan,
                        physical,
                        optimizer,
                        execution,
                        datasets: ctx.selected_profiles.iter().map(|p| p.name.clone()).collect(),
                        records,
                    });
                }
                Err(f) => self.record_classified(&task_id, iteration, &f.message, f.node_id),
            }
        }
        Err(fail(iterations, last_plan, None))
    }

    /// Ends a task: its records expire and recurring errors are promoted.
    fn finish(&self, task_id: &str) {
        if let Err(e) = self.memory.expire_task(task_id) {
            log::warn!("cannot expire task records: {e}");
        }
        if let Err(e) = self.memory.promote() {
            log::warn!("memory promotion failed: {e}");
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionFailure {
    pub node_id: Option<NodeId>,
    pub message: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_parsing() {
        assert!(ValidationVerdict::parse(ValidatorKind::Completeness, "APPROVE").approved);
        assert!(ValidationVerdict::parse(ValidatorKind::Completeness, " approve.").approved);
        let v = ValidationVerdict::parse(ValidatorKind::Guideline, "REJECT: fees must be summed per merchant");
        assert!(!v.approved);
        assert_eq!(v.correction, "fees must be summed per merchant");
        assert_eq!(v.record_text(), "[guideline] fees must be summed per merchant");
        let v = ValidationVerdict::parse(ValidatorKind::Guideline, "maybe");
        assert_eq!((v.approved, v.correction.as_str()), (false, "maybe"));
        assert!(!ValidationVerdict::parse(ValidatorKind::Guideline, "REJECT").correction.is_empty());
    }

    #[test]
    fn strict_majority() {
        assert!(majority(4, 6));
        assert!(!majority(3, 6));
        assert!(!majority(1, 3));
        assert!(majority(2, 3));
        assert!(!majority(0, 0));
    }

    #[test]
    fn json_extraction() {
        assert_eq!(extract_json("```json\n{\"a\": 1}\n```", '{', '}'), Some("{\"a\": 1}"));
        assert_eq!(extract_json("use [\"a\", \"b\"] please", '[', ']'), Some("[\"a\", \"b\"]"));
        assert_eq!(extract_json("none", '{', '}'), None);
    }

    #[test]
    fn task_ids_are_stable() {
        assert_eq!(task_id("total fees"), task_id(" total fees "));
        assert_ne!(task_id("a"), task_id("b"));
        assert!(task_id("a").starts_with("task-"));
    }
}

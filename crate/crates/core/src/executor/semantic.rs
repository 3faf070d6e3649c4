//! Physical implementations of the semantic operators.
//!
//! Prompt builders live here so the optimizer's token estimates and the
//! executor render the exact same text.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::models::ModelSpec;
use crate::plan::{Column, Schema, SemType};
use crate::provider::{cosine, ChatProvider, ChatRequest, Embedder, ROW_MARKER};
use crate::table::{Table, Value};

pub const AFFIRMATIVE: [&str; 3] = ["yes", "true", "keep"];

/// `col: value` lines for the given columns, after the row marker.
fn row_section(pairs: &[(String, String)]) -> String {
    let mut s = String::from(ROW_MARKER);
    let lines: Vec<String> = pairs.iter().map(|(c, v)| format!("{c}: {v}")).collect();
    s.push_str(&lines.join("\n"));
    s
}

fn pairs(schema: &Schema, row: &[Value], columns: &[String], prefix: &str) -> Vec<(String, String)> {
    columns
        .iter()
        .map(|c| {
            let v = schema.index_of(c).map(|i| row[i].render()).unwrap_or_default();
            (format!("{prefix}{c}"), v)
        })
        .collect()
}

pub fn filter_prompt(predicate_prompt: &str, columns: &[String], schema: &Schema, row: &[Value]) -> String {
    format!(
        "Answer yes or no. Does the row satisfy the condition: {}{}",
        predicate_prompt.trim(),
        row_section(&pairs(schema, row, columns, ""))
    )
}

pub fn extract_prompt(instruction: &str, source: &str, target: &str, schema: &Schema, row: &[Value]) -> String {
    format!(
        "{}\nReturn only the value for '{target}' on a single line, or nothing if it is absent.{}",
        instruction.trim(),
        row_section(&pairs(schema, row, &[source.to_string()], ""))
    )
}

pub fn group_prompt(label_prompt: &str, max_labels: u32, columns: &[String], schema: &Schema, row: &[Value]) -> String {
    format!(
        "{}\nAnswer with a short label only; use at most {max_labels} distinct labels across all rows.{}",
        label_prompt.trim(),
        row_section(&pairs(schema, row, columns, ""))
    )
}

#[allow(clippy::too_many_arguments)]
pub fn join_prompt(
    match_prompt: &str,
    left_cols: &[String],
    left: &Schema,
    lrow: &[Value],
    right_cols: &[String],
    right: &Schema,
    rrow: &[Value],
) -> String {
    let mut p = pairs(left, lrow, left_cols, "left.");
    p.extend(pairs(right, rrow, right_cols, "right."));
    format!("Answer yes or no. Do the two records match: {}{}", match_prompt.trim(), row_section(&p))
}

/// First non-blank word, case-insensitively, in {yes, true, keep}.
pub fn is_affirmative(answer: &str) -> bool {
    let word: String = answer
        .split_whitespace()
        .next()
        .unwrap_or("")
        .chars()
        .filter(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_lowercase();
    AFFIRMATIVE.contains(&word.as_str())
}

/// Single-line answer with surrounding quotes removed. Multi-line answers
/// cannot be attributed to one value.
pub fn parse_value(answer: &str) -> Option<String> {
    let lines: Vec<&str> = answer.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    match lines.as_slice() {
        [] => Some(String::new()),
        [one] => Some(one.trim_matches(|c| c == '"' || c == '\'' || c == '`').trim().to_string()),
        _ => None,
    }
}

/// Counters for one model (or the embedding prefilter) within an operator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub rows_in: usize,
    pub rows_out: usize,
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost: f64,
}

impl StageTrace {
    fn new(stage: &str, model: Option<&ModelSpec>, rows_in: usize) -> Self {
        StageTrace {
            stage: stage.to_string(),
            model: model.map(|m| m.model_name.clone()),
            rows_in,
            ..Default::default()
        }
    }
}

/// Maps `f` over `items` on up to `limit` threads; results keep input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], limit: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if limit <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..limit.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("slot lock").expect("every slot filled")).collect()
}

/// A chat model bound to a provider, with a concurrency limit.
#[derive(Clone, Copy)]
pub struct Llm<'a> {
    pub provider: &'a dyn ChatProvider,
    pub model: &'a ModelSpec,
    pub parallelism: usize,
}

impl Llm<'_> {
    /// Runs every prompt; the first failure in input order aborts.
    fn ask_all(&self, prompts: &[String], max_tokens: u32, trace: &mut StageTrace) -> Result<Vec<String>, String> {
        let answers = parallel_map(prompts, self.parallelism, |p| {
            self.provider.chat(&ChatRequest::new(self.model.model_name.clone(), p.clone()).with_max_tokens(max_tokens))
        });
        let mut out = Vec::with_capacity(answers.len());
        for a in answers {
            trace.calls += 1;
            let r = a.map_err(|e| e.to_string())?;
            trace.input_tokens += r.usage.input_tokens;
            trace.output_tokens += r.usage.output_tokens;
            out.push(r.text);
        }
        trace.cost = self.model.cost(trace.input_tokens as f64, trace.output_tokens as f64);
        Ok(out)
    }
}

/// Output of one semantic operator run.
#[derive(Debug, Clone)]
pub struct SemOutput {
    pub table: Table,
    pub stages: Vec<StageTrace>,
    pub parse_warnings: u64,
}

fn keep(input: &Table, mask: &[bool]) -> Table {
    let rows = input.rows.iter().zip(mask).filter(|(_, k)| **k).map(|(r, _)| r.clone()).collect();
    Table { schema: input.schema.clone(), rows }
}

pub fn per_row_filter(input: &Table, columns: &[String], predicate: &str, llm: Llm) -> Result<SemOutput, String> {
    let mut st = StageTrace::new("llm", Some(llm.model), input.len());
    let prompts: Vec<String> = input.rows.iter().map(|r| filter_prompt(predicate, columns, &input.schema, r)).collect();
    let answers = llm.ask_all(&prompts, 16, &mut st)?;
    let mask: Vec<bool> = answers.iter().map(|a| is_affirmative(a)).collect();
    let table = keep(input, &mask);
    st.rows_out = table.len();
    Ok(SemOutput { table, stages: vec![st], parse_warnings: 0 })
}

pub fn per_row_extract(
    input: &Table,
    sources: &[String],
    targets: &[String],
    instruction: &str,
    llm: Llm,
) -> Result<SemOutput, String> {
    let mut st = StageTrace::new("llm", Some(llm.model), input.len());
    let mut schema = input.schema.clone();
    for t in targets {
        schema.push(Column::new(t.clone(), SemType::Text)).map_err(|e| e.to_string())?;
    }
    let mut prompts = Vec::with_capacity(input.len() * targets.len());
    for row in &input.rows {
        for (s, t) in sources.iter().zip(targets) {
            prompts.push(extract_prompt(instruction, s, t, &input.schema, row));
        }
    }
    let answers = llm.ask_all(&prompts, 256, &mut st)?;
    let mut warnings = 0;
    let mut rows = Vec::with_capacity(input.len());
    let mut it = answers.iter();
    for row in &input.rows {
        let mut r = row.clone();
        for _ in targets {
            let a = it.next().expect("one answer per prompt");
            r.push(Value::Text(parse_value(a).unwrap_or_else(|| {
                warnings += 1;
                String::new()
            })));
        }
        rows.push(r);
    }
    st.rows_out = rows.len();
    Ok(SemOutput { table: Table { schema, rows }, stages: vec![st], parse_warnings: warnings })
}

pub fn per_row_group(
    input: &Table,
    columns: &[String],
    label_prompt: &str,
    max_labels: u32,
    label_column: &str,
    llm: Llm,
) -> Result<SemOutput, String> {
    let mut st = StageTrace::new("llm", Some(llm.model), input.len());
    let mut schema = input.schema.clone();
    schema.push(Column::new(label_column, SemType::Text)).map_err(|e| e.to_string())?;
    let prompts: Vec<String> =
        input.rows.iter().map(|r| group_prompt(label_prompt, max_labels, columns, &input.schema, r)).collect();
    let answers = llm.ask_all(&prompts, 32, &mut st)?;
    let mut warnings = 0;
    let mut rows = Vec::with_capacity(input.len());
    for (row, a) in input.rows.iter().zip(&answers) {
        let mut r = row.clone();
        r.push(Value::Text(parse_value(a).unwrap_or_else(|| {
            warnings += 1;
            String::new()
        })));
        rows.push(r);
    }
    let mut distinct: Vec<&Value> = rows.iter().map(|r| r.last().expect("label")).collect();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    if distinct.len() > max_labels as usize {
        log::warn!("SemGroup produced {} labels, more than max_labels={max_labels}", distinct.len());
        warnings += 1;
    }
    st.rows_out = rows.len();
    Ok(SemOutput { table: Table { schema, rows }, stages: vec![st], parse_warnings: warnings })
}

/// Nested-loop semantic join: one call per left/right pair, left-major output.
pub fn per_row_join(
    left: &Table,
    right: &Table,
    left_cols: &[String],
    right_cols: &[String],
    match_prompt: &str,
    llm: Llm,
) -> Result<SemOutput, String> {
    let schema = left.schema.concat(&right.schema).map_err(|e| e.to_string())?;
    let mut st = StageTrace::new("llm", Some(llm.model), left.len() * right.len());
    let mut prompts = Vec::with_capacity(left.len() * right.len());
    for l in &left.rows {
        for r in &right.rows {
            prompts.push(join_prompt(match_prompt, left_cols, &left.schema, l, right_cols, &right.schema, r));
        }
    }
    let answers = llm.ask_all(&prompts, 16, &mut st)?;
    let mut rows = Vec::new();
    let mut it = answers.iter();
    for l in &left.rows {
        for r in &right.rows {
            if is_affirmative(it.next().expect("one answer per pair")) {
                let mut row = l.clone();
                row.extend(r.iter().cloned());
                rows.push(row);
            }
        }
    }
    st.rows_out = rows.len();
    Ok(SemOutput { table: Table { schema, rows }, stages: vec![st], parse_warnings: 0 })
}

/// Per-row maximum cosine between the predicate and the referenced column values.
pub fn similarity_scores(
    input: &Table,
    columns: &[String],
    predicate: &str,
    embedder: &dyn Embedder,
) -> Result<Vec<f64>, String> {
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| input.schema.index_of(c).ok_or_else(|| format!("UnknownColumn('{c}')")))
        .collect::<Result<_, _>>()?;
    let q = embedder.embed_one(predicate).map_err(|e| e.to_string())?;
    let texts: Vec<String> = input.rows.iter().flat_map(|r| idx.iter().map(|i| r[*i].render())).collect();
    let vectors = if texts.is_empty() { Vec::new() } else { embedder.embed(&texts).map_err(|e| e.to_string())? };
    if let Some(v) = vectors.iter().find(|v| v.len() != q.len()) {
        return Err(format!("DimensionMismatch: expected {}, got {}", q.len(), v.len()));
    }
    Ok(vectors
        .chunks(idx.len().max(1))
        .map(|c| c.iter().map(|v| cosine(&q, v)).fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

/// Keeps rows whose best similarity to the predicate reaches `tau`; no chat calls.
pub fn vector_filter(
    input: &Table,
    columns: &[String],
    predicate: &str,
    tau: f64,
    embedder: &dyn Embedder,
) -> Result<SemOutput, String> {
    let mut st = StageTrace::new("vector", None, input.len());
    let table = if tau <= 0.0 {
        input.clone()
    } else {
        let scores = similarity_scores(input, columns, predicate, embedder)?;
        let mask: Vec<bool> = scores.iter().map(|s| *s >= tau).collect();
        keep(input, &mask)
    };
    st.rows_out = table.len();
    Ok(SemOutput { table, stages: vec![st], parse_warnings: 0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    /// Embedding prefilter threshold; 0 lets every row through.
    pub tau: f64,
    pub small: ModelSpec,
    pub large: ModelSpec,
    pub verify_positives: bool,
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0 + 1e-6).contains(&self.tau) {
            return Err(format!("cascade threshold {} is outside [0, 1]", self.tau));
        }
        Ok(())
    }
}

/// Embedding prefilter, then the small model, then (optionally) the large
/// model on the small model's positives.
pub fn cascade_filter(
    input: &Table,
    columns: &[String],
    predicate: &str,
    cfg: &CascadeConfig,
    provider: &dyn ChatProvider,
    embedder: Option<&dyn Embedder>,
    parallelism: usize,
) -> Result<SemOutput, String> {
    cfg.validate()?;
    let stage1 = match embedder {
        Some(e) => vector_filter(input, columns, predicate, cfg.tau, e)?,
        None if cfg.tau <= 0.0 => {
            let st = StageTrace {
                stage: "vector".into(),
                rows_in: input.len(),
                rows_out: input.len(),
                ..Default::default()
            };
            SemOutput { table: input.clone(), stages: vec![st], parse_warnings: 0 }
        }
        None => return Err("cascade prefilter needs an embedder".into()),
    };
    let small = Llm { provider, model: &cfg.small, parallelism };
    let mut stage2 = per_row_filter(&stage1.table, columns, predicate, small)?;
    stage2.stages[0].stage = "small".into();
    let mut stages = stage1.stages;
    stages.append(&mut stage2.stages);
    let table = if cfg.verify_positives {
        let large = Llm { provider, model: &cfg.large, parallelism };
        let mut stage3 = per_row_filter(&stage2.table, columns, predicate, large)?;
        stage3.stages[0].stage = "large".into();
        stages.append(&mut stage3.stages);
        stage3.table
    } else {
        stage2.table
    };
    Ok(SemOutput { table, stages, parse_warnings: 0 })
}

//! Feedback memory: categorized short-term records per task, a buffer of
//! expired records, and long-term knowledge tuples (task, task embedding,
//! memory text) promoted from recurring errors.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use regex::Regex;
use rusqlite::{params, Connection};
use serde::{Deserialize, Serialize};

use crate::catalog::{decode_vector, encode_vector, rank};
use crate::plan::{ErrorCategory, NodeId};
use crate::prompts::Prompts;
use crate::provider::{cosine, ChatProvider, ChatRequest, Embedder, ProviderError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortTermRecord {
    pub task_id: String,
    pub iteration: u32,
    pub category: ErrorCategory,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTermRecord {
    pub task: String,
    pub task_embedding: Vec<f64>,
    pub memory: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Profiling,
    Planning,
    Manipulation,
}

impl AgentRole {
    pub const ALL: [AgentRole; 3] = [AgentRole::Profiling, AgentRole::Planning, AgentRole::Manipulation];

    /// The error category each agent is responsible for.
    pub fn category(self) -> ErrorCategory {
        match self {
            AgentRole::Profiling => ErrorCategory::Data,
            AgentRole::Planning => ErrorCategory::Semantic,
            AgentRole::Manipulation => ErrorCategory::Grammar,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentRole::Profiling => "profiling",
            AgentRole::Planning => "planning",
            AgentRole::Manipulation => "manipulation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MemorySource {
    LongTerm,
    ShortTerm,
}

/// One record handed to an agent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryItem {
    pub source: MemorySource,
    pub category: ErrorCategory,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u32>,
}

#[derive(Debug, Clone)]
struct DictEntry {
    pattern: Regex,
    /// `None` takes the category from the first capture group.
    category: Option<ErrorCategory>,
    advice: Option<String>,
}

/// Ordered message patterns; the first match wins.
#[derive(Debug, Clone)]
pub struct ErrorDictionary {
    entries: Vec<DictEntry>,
}

pub const COLUMN_ADVICE: &str = "Ensure the columns referred in the expression exist in the datasets.";
pub const OPERAND_ADVICE: &str = "Compare operands of compatible types and never compare a column with an empty list.";
pub const DECODE_ADVICE: &str =
    "Emit a well-formed plan document that uses only the listed operators and their attributes.";
pub const DATA_ADVICE: &str = "Reference only datasets, tables and connectors that the catalog lists.";
pub const PROVIDER_ADVICE: &str = "Model service failures are transient; retry the step before changing the plan.";
pub const SEMANTIC_ADVICE: &str =
    "Check that the plan computes every quantity the question asks for and follows the documented rules.";

impl Default for ErrorDictionary {
    fn default() -> Self {
        use ErrorCategory::*;
        let e = |p: &str, c: Option<ErrorCategory>, a: Option<&str>| DictEntry {
            pattern: Regex::new(p).expect("static pattern"),
            category: c,
            advice: a.map(str::to_string),
        };
        ErrorDictionary {
            entries: vec![
                e(r"^Recurring (data|semantic|grammar) error", None, None),
                e(r"^\[(completeness|guideline)\]", Some(Semantic), Some(SEMANTIC_ADVICE)),
                e(r"UnknownColumn|no such column|columns referred", Some(Grammar), Some(COLUMN_ADVICE)),
                e(r"TypeMismatch|operand|empty list", Some(Grammar), Some(OPERAND_ADVICE)),
                e(
                    r"DecodeError|UnknownOperator|ArityError|InvalidAttribute|ExpressionError|DuplicateNodeId|well-formed plan|Script operator",
                    Some(Grammar),
                    Some(DECODE_ADVICE),
                ),
                e(
                    r"ConnectorError|UnknownDataset|EmptyDataset|NoCandidate|no such table|catalog lists",
                    Some(Data),
                    Some(DATA_ADVICE),
                ),
                e(r"ProviderError|UnknownFixture|service failures", Some(Data), Some(PROVIDER_ADVICE)),
                e(r"computes every quantity", Some(Semantic), None),
            ],
        }
    }
}

impl ErrorDictionary {
    pub fn empty() -> Self {
        ErrorDictionary { entries: Vec::new() }
    }

    pub fn push(&mut self, pattern: &str, category: ErrorCategory, advice: Option<&str>) -> Result<(), regex::Error> {
        self.entries.push(DictEntry {
            pattern: Regex::new(pattern)?,
            category: Some(category),
            advice: advice.map(str::to_string),
        });
        Ok(())
    }

    pub fn lookup(&self, message: &str) -> Option<(ErrorCategory, Option<&str>)> {
        for e in &self.entries {
            if let Some(caps) = e.pattern.captures(message) {
                let cat = match e.category {
                    Some(c) => c,
                    None => caps.get(1).and_then(|m| ErrorCategory::from_name(m.as_str()))?,
                };
                return Some((cat, e.advice.as_deref()));
            }
        }
        None
    }
}

/// Masks quoted literals and numbers so that errors differing only in names
/// or values embed identically.
pub fn normalize_message(message: &str) -> String {
    let quoted = Regex::new(r#"'[^']*'|"[^"]*"|`[^`]*`"#).expect("static regex");
    let numbers = Regex::new(r"\b\d+(\.\d+)?\b").expect("static regex");
    let m = quoted.replace_all(message, "?");
    numbers.replace_all(&m, "#").into_owned()
}

fn common_prefix(messages: &[&str]) -> String {
    let Some(first) = messages.first() else { return String::new() };
    let mut end = first.len();
    for m in &messages[1..] {
        end = first
            .char_indices()
            .zip(m.chars())
            .take_while(|((_, a), b)| a == b)
            .map(|((i, a), _)| i + a.len_utf8())
            .last()
            .unwrap_or(0)
            .min(end);
    }
    first[..end].trim_end_matches(|c: char| !c.is_alphanumeric() && c != ')' && c != ']').to_string()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemorySettings {
    /// Short-term records kept per task before the oldest expire.
    pub short_term_cap: usize,
    /// Cosine threshold for grouping expired records.
    pub theta: f64,
    /// Long-term records retrieved per agent call.
    pub top_k: usize,
}

impl Default for MemorySettings {
    fn default() -> Self {
        MemorySettings { short_term_cap: 50, theta: 0.85, top_k: 5 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PromotionReport {
    pub created: usize,
    pub discarded: usize,
    /// Records kept in the buffer because summarization failed.
    pub retained: usize,
}

#[derive(Default)]
struct State {
    tasks: BTreeMap<String, String>,
    short: BTreeMap<String, VecDeque<ShortTermRecord>>,
    buffer: Vec<ShortTermRecord>,
    long: Vec<LongTermRecord>,
}

struct Llm {
    provider: Arc<dyn ChatProvider>,
    model: String,
}

pub struct MemoryStore {
    db: Mutex<Connection>,
    state: RwLock<State>,
    embedder: Arc<dyn Embedder>,
    classifier: Option<Llm>,
    summarizer: Option<Llm>,
    prompts: Prompts,
    dictionary: ErrorDictionary,
    settings: MemorySettings,
}

const SCHEMA_SQL: &str = "
CREATE TABLE IF NOT EXISTS tasks (task_id TEXT PRIMARY KEY, task TEXT NOT NULL);
CREATE TABLE IF NOT EXISTS short_term (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    task_id TEXT NOT NULL,
    iteration INTEGER NOT NULL,
    category TEXT NOT NULL,
    message TEXT NOT NULL,
    node_id INTEGER
);
CREATE TABLE IF NOT EXISTS expired (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    task_id TEXT NOT NULL,
    iteration INTEGER NOT NULL,
    category TEXT NOT NULL,
    message TEXT NOT NULL,
    node_id INTEGER
);
CREATE TABLE IF NOT EXISTS memory (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    task TEXT NOT NULL,
    task_embedding BLOB NOT NULL,
    memory TEXT NOT NULL
);
";

fn db_err(e: rusqlite::Error) -> ProviderError {
    ProviderError::Store(format!("memory store: {e}"))
}

fn read_records(db: &Connection, table: &str) -> Result<Vec<ShortTermRecord>, rusqlite::Error> {
    let mut stmt =
        db.prepare(&format!("SELECT task_id, iteration, category, message, node_id FROM {table} ORDER BY seq"))?;
    let rows = stmt.query_map([], |r| {
        let cat: String = r.get(2)?;
        Ok(ShortTermRecord {
            task_id: r.get(0)?,
            iteration: r.get(1)?,
            category: ErrorCategory::from_name(&cat).unwrap_or(ErrorCategory::Semantic),
            message: r.get(3)?,
            node_id: r.get(4)?,
        })
    })?;
    rows.collect()
}

fn insert_record(db: &Connection, table: &str, r: &ShortTermRecord) -> Result<(), rusqlite::Error> {
    db.execute(
        &format!("INSERT INTO {table} (task_id, iteration, category, message, node_id) VALUES (?1, ?2, ?3, ?4, ?5)"),
        params![r.task_id, r.iteration, r.category.name(), r.message, r.node_id],
    )?;
    Ok(())
}

impl MemoryStore {
    /// Opens (or creates) the store; `None` keeps it in memory.
    pub fn open(path: Option<&Path>, embedder: Arc<dyn Embedder>) -> Result<MemoryStore, ProviderError> {
        let conn = match path {
            Some(p) => {
                if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent).map_err(|e| ProviderError::Store(e.to_string()))?;
                }
                Connection::open(p).map_err(db_err)?
            }
            None => Connection::open_in_memory().map_err(db_err)?,
        };
        conn.execute_batch(SCHEMA_SQL).map_err(db_err)?;
        let mut state = State::default();
        {
            let mut stmt = conn.prepare("SELECT task_id, task FROM tasks").map_err(db_err)?;
            for row in stmt.query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?))).map_err(db_err)? {
                let (id, task) = row.map_err(db_err)?;
                state.tasks.insert(id, task);
            }
            for r in read_records(&conn, "short_term").map_err(db_err)? {
                state.short.entry(r.task_id.clone()).or_default().push_back(r);
            }
            state.buffer = read_records(&conn, "expired").map_err(db_err)?;
            let mut stmt =
                conn.prepare("SELECT task, task_embedding, memory FROM memory ORDER BY id").map_err(db_err)?;
            for row in stmt
                .query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, Vec<u8>>(1)?, r.get::<_, String>(2)?)))
                .map_err(db_err)?
            {
                let (task, emb, memory) = row.map_err(db_err)?;
                state.long.push(LongTermRecord { task, task_embedding: decode_vector(&emb), memory });
            }
        }
        Ok(MemoryStore {
            db: Mutex::new(conn),
            state: RwLock::new(state),
            embedder,
            classifier: None,
            summarizer: None,
            prompts: Prompts::default(),
            dictionary: ErrorDictionary::default(),
            settings: MemorySettings::default(),
        })
    }

    pub fn with_settings(mut self, settings: MemorySettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn with_dictionary(mut self, dictionary: ErrorDictionary) -> Self {
        self.dictionary = dictionary;
        self
    }

    pub fn with_prompts(mut self, prompts: Prompts) -> Self {
        self.prompts = prompts;
        self
    }

    /// Model consulted for messages the dictionary does not know.
    pub fn with_classifier(mut self, provider: Arc<dyn ChatProvider>, model: impl Into<String>) -> Self {
        self.classifier = Some(Llm { provider, model: model.into() });
        self
    }

    /// Model that writes long-term knowledge; without one a template is used.
    pub fn with_summarizer(mut self, provider: Arc<dyn ChatProvider>, model: impl Into<String>) -> Self {
        self.summarizer = Some(Llm { provider, model: model.into() });
        self
    }

    pub fn settings(&self) -> MemorySettings {
        self.settings
    }

    pub fn dictionary(&self) -> &ErrorDictionary {
        &self.dictionary
    }

    /// Dictionary first, then the classifier model, then `semantic`.
    pub fn classify_error(&self, message: &str) -> ErrorCategory {
        if let Some((c, _)) = self.dictionary.lookup(message) {
            return c;
        }
        let Some(llm) = &self.classifier else {
            log::warn!("no classifier for unknown error; defaulting to semantic: {message}");
            return ErrorCategory::Semantic;
        };
        let answer = self
            .prompts
            .render("classify_error", &[("message", message)])
            .map_err(|e| ProviderError::InvalidRequest(e.to_string()))
            .and_then(|p| llm.provider.chat(&ChatRequest::new(&llm.model, p).with_max_tokens(5)));
        match answer {
            Ok(r) => {
                let word =
                    r.text.split(|c: char| !c.is_alphabetic()).find(|w| !w.is_empty()).unwrap_or("").to_lowercase();
                ErrorCategory::from_name(&word).unwrap_or_else(|| {
                    log::warn!("classifier answered {:?}; defaulting to semantic", r.text);
                    ErrorCategory::Semantic
                })
            }
            Err(e) => {
                log::warn!("classifier unavailable ({e}); defaulting to semantic");
                ErrorCategory::Semantic
            }
        }
    }

    pub fn register_task(&self, task_id: &str, task: &str) -> Result<(), ProviderError> {
        self.db
            .lock()
            .expect("memory db poisoned")
            .execute("INSERT OR REPLACE INTO tasks (task_id, task) VALUES (?1, ?2)", params![task_id, task])
            .map_err(db_err)?;
        self.state.write().expect("memory state poisoned").tasks.insert(task_id.to_string(), task.to_string());
        Ok(())
    }

    /// Appends a record; beyond the cap the oldest record of the task moves
    /// to the expiry buffer. Iterations never go backwards within a task.
    pub fn record(&self, mut record: ShortTermRecord) -> Result<(), ProviderError> {
        let mut state = self.state.write().expect("memory state poisoned");
        let db = self.db.lock().expect("memory db poisoned");
        let queue = state.short.entry(record.task_id.clone()).or_default();
        if let Some(last) = queue.back() {
            record.iteration = record.iteration.max(last.iteration);
        }
        insert_record(&db, "short_term", &record).map_err(db_err)?;
        queue.push_back(record);
        let mut expired = Vec::new();
        while queue.len() > self.settings.short_term_cap {
            expired.push(queue.pop_front().expect("non-empty queue"));
        }
        for r in expired {
            db.execute(
                "DELETE FROM short_term WHERE seq = (SELECT MIN(seq) FROM short_term WHERE task_id = ?1)",
                params![r.task_id],
            )
            .map_err(db_err)?;
            insert_record(&db, "expired", &r).map_err(db_err)?;
            state.buffer.push(r);
        }
        Ok(())
    }

    /// Classifies and records a message in one step.
    pub fn record_message(
        &self,
        task_id: &str,
        iteration: u32,
        message: &str,
        node_id: Option<NodeId>,
    ) -> Result<ErrorCategory, ProviderError> {
        let category = self.classify_error(message);
        self.record(ShortTermRecord {
            task_id: task_id.into(),
            iteration,
            category,
            message: message.into(),
            node_id,
        })?;
        Ok(category)
    }

    /// Moves all of a task's short-term records to the expiry buffer.
    pub fn expire_task(&self, task_id: &str) -> Result<usize, ProviderError> {
        let mut state = self.state.write().expect("memory state poisoned");
        let db = self.db.lock().expect("memory db poisoned");
        let records: Vec<ShortTermRecord> = state.short.remove(task_id).map(Vec::from).unwrap_or_default();
        db.execute("DELETE FROM short_term WHERE task_id = ?1", params![task_id]).map_err(db_err)?;
        for r in &records {
            insert_record(&db, "expired", r).map_err(db_err)?;
        }
        let n = records.len();
        state.buffer.extend(records);
        Ok(n)
    }

    pub fn short_term(&self, task_id: &str) -> Vec<ShortTermRecord> {
        self.state
            .read()
            .expect("memory state poisoned")
            .short
            .get(task_id)
            .map(|q| q.iter().cloned().collect())
            .unwrap_or_default()
    }

    pub fn buffer(&self) -> Vec<ShortTermRecord> {
        self.state.read().expect("memory state poisoned").buffer.clone()
    }

    pub fn long_term(&self) -> Vec<LongTermRecord> {
        self.state.read().expect("memory state poisoned").long.clone()
    }

    /// Records of a task still held in short-term memory or the buffer.
    pub fn task_record_count(&self, task_id: &str) -> usize {
        let s = self.state.read().expect("memory state poisoned");
        s.short.get(task_id).map_or(0, VecDeque::len) + s.buffer.iter().filter(|r| r.task_id == task_id).count()
    }

    /// Groups the buffer by category and message similarity; every group of
    /// two or more becomes one long-term record and singletons are dropped.
    pub fn promote(&self) -> Result<PromotionReport, ProviderError> {
        let buffer = self.buffer();
        let mut report = PromotionReport::default();
        if buffer.is_empty() {
            return Ok(report);
        }
        let normalized: Vec<String> = buffer.iter().map(|r| normalize_message(&r.message)).collect();
        let vectors = self.embedder.embed(&normalized)?;
        // greedy clustering against each group's first member
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in 0..buffer.len() {
            let home = groups.iter_mut().find(|g| {
                let lead = g[0];
                buffer[lead].category == buffer[i].category
                    && cosine(&vectors[lead], &vectors[i]) >= self.settings.theta
            });
            match home {
                Some(g) => g.push(i),
                None => groups.push(vec![i]),
            }
        }
        let tasks = self.state.read().expect("memory state poisoned").tasks.clone();
        let mut retained = Vec::new();
        let mut created = Vec::new();
        for g in groups {
            if g.len() < 2 {
                report.discarded += 1;
                continue;
            }
            let members: Vec<&ShortTermRecord> = g.iter().map(|i| &buffer[*i]).collect();
            let task = tasks.get(&members[0].task_id).cloned().unwrap_or_else(|| members[0].task_id.clone());
            match self.summarize(&members).and_then(|m| Ok((m, self.embedder.embed_one(&task)?))) {
                Ok((memory, task_embedding)) => created.push(LongTermRecord { task, task_embedding, memory }),
                Err(e) => {
                    log::warn!("promotion of {} records deferred: {e}", members.len());
                    retained.extend(members.into_iter().cloned());
                }
            }
        }
        let mut state = self.state.write().expect("memory state poisoned");
        let mut db = self.db.lock().expect("memory db poisoned");
        let tx = db.transaction().map_err(db_err)?;
        tx.execute("DELETE FROM expired", []).map_err(db_err)?;
        for r in &retained {
            insert_record(&tx, "expired", r).map_err(db_err)?;
        }
        for rec in created {
            if state.long.iter().any(|l| l.task == rec.task && l.memory == rec.memory) {
                continue;
            }
            tx.execute(
                "INSERT INTO memory (task, task_embedding, memory) VALUES (?1, ?2, ?3)",
                params![rec.task, encode_vector(&rec.task_embedding), rec.memory],
            )
            .map_err(db_err)?;
            state.long.push(rec);
            report.created += 1;
        }
        tx.commit().map_err(db_err)?;
        report.retained = retained.len();
        state.buffer = retained;
        Ok(report)
    }

    fn summarize(&self, members: &[&ShortTermRecord]) -> Result<String, ProviderError> {
        let category = members[0].category;
        if let Some(llm) = &self.summarizer {
            let errors: String = members.iter().map(|r| format!("- {}\n", r.message)).collect();
            let prompt = self
                .prompts
                .render("summarize_errors", &[("category", category.name()), ("errors", &errors)])
                .map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
            let text = llm.provider.chat(&ChatRequest::new(&llm.model, prompt).with_max_tokens(80))?.text;
            let text = text.trim();
            if !text.is_empty() {
                return Ok(text.to_string());
            }
        }
        if let Some((_, Some(advice))) = self.dictionary.lookup(&members[0].message) {
            return Ok(advice.to_string());
        }
        let messages: Vec<&str> = members.iter().map(|r| r.message.as_str()).collect();
        let mut prefix = common_prefix(&messages);
        if prefix.chars().count() < 3 {
            prefix = normalize_message(&members[0].message);
        }
        Ok(format!("Recurring {} error: {prefix}", category.name()))
    }

    /// Two-phase selection: the top-k long-term records by task similarity,
    /// then the task's short-term records (newest first); both filtered to
    /// the categories the role handles.
    pub fn retrieve_for_agent(
        &self,
        role: AgentRole,
        task_id: &str,
        task: &str,
    ) -> Result<Vec<MemoryItem>, ProviderError> {
        let q = self.embedder.embed_one(task)?;
        let (long, short) = {
            let s = self.state.read().expect("memory state poisoned");
            (s.long.clone(), s.short.get(task_id).map(|q| q.iter().cloned().collect::<Vec<_>>()).unwrap_or_default())
        };
        let scored: Vec<(usize, f64)> =
            long.iter().enumerate().map(|(i, r)| (i, cosine(&q, &r.task_embedding))).collect();
        let mut out = Vec::new();
        for (i, _) in rank(scored, self.settings.top_k) {
            let category = self.classify_error(&long[i].memory);
            if category == role.category() {
                out.push(MemoryItem {
                    source: MemorySource::LongTerm,
                    category,
                    text: long[i].memory.clone(),
                    iteration: None,
                });
            }
        }
        for r in short.iter().rev().filter(|r| r.category == role.category()) {
            out.push(MemoryItem {
                source: MemorySource::ShortTerm,
                category: r.category,
                text: r.message.clone(),
                iteration: Some(r.iteration),
            });
        }
        Ok(out)
    }

    /// Every record of the task, oldest first, as text lines.
    pub fn transcript(&self, task_id: &str) -> String {
        let s = self.state.read().expect("memory state poisoned");
        let buffered = s.buffer.iter().filter(|r| r.task_id == task_id);
        let current = s.short.get(task_id).into_iter().flatten();
        buffered
            .chain(current)
            .map(|r| match r.node_id {
                Some(n) => format!("[iteration {}] {} (node {n}): {}", r.iteration, r.category, r.message),
                None => format!("[iteration {}] {}: {}", r.iteration, r.category, r.message),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Memory items as prompt text, one per line.
pub fn render_items(items: &[MemoryItem]) -> String {
    if items.is_empty() {
        return "(none)".to_string();
    }
    items
        .iter()
        .map(|i| match i.source {
            MemorySource::LongTerm => format!("- knowledge: {}", i.text),
            MemorySource::ShortTerm => format!("- iteration {}: {}", i.iteration.unwrap_or(0), i.text),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{HashEmbedder, MockProvider, MockRule, Responder, UnavailableProvider};

    fn store() -> MemoryStore {
        MemoryStore::open(None, Arc::new(HashEmbedder::default())).unwrap()
    }

    fn rec(task: &str, it: u32, cat: ErrorCategory, msg: &str) -> ShortTermRecord {
        ShortTermRecord { task_id: task.into(), iteration: it, category: cat, message: msg.into(), node_id: None }
    }

    #[test]
    fn dictionary_examples() {
        let m = store();
        assert_eq!(m.classify_error("UnknownColumn('H')"), ErrorCategory::Grammar);
        assert_eq!(m.classify_error("ConnectorError: dataset not found"), ErrorCategory::Data);
        assert_eq!(m.classify_error("[completeness] the average is missing"), ErrorCategory::Semantic);
        assert_eq!(m.classify_error("Recurring data error: x"), ErrorCategory::Data);
        assert_eq!(m.classify_error(COLUMN_ADVICE), ErrorCategory::Grammar);
        assert_eq!(m.classify_error("something novel"), ErrorCategory::Semantic);
    }

    #[test]
    fn llm_classifies_unknown_messages() {
        let mock = MockProvider::new()
            .rule(MockRule::when(&["Classify the error", "quota"], Responder::Fixed { text: "Data.".into() }))
            .unwrap();
        let m = store().with_classifier(Arc::new(mock), "small");
        assert_eq!(m.classify_error("quota exceeded on warehouse"), ErrorCategory::Data);
        // unmatched prompt behaves like an outage
        assert_eq!(m.classify_error("weird"), ErrorCategory::Semantic);
        let m = store().with_classifier(Arc::new(UnavailableProvider::default()), "small");
        assert_eq!(m.classify_error("weird"), ErrorCategory::Semantic);
    }

    #[test]
    fn cap_expires_oldest_into_buffer() {
        let m = store().with_settings(MemorySettings { short_term_cap: 3, ..Default::default() });
        for i in 0..4 {
            m.record(rec("t", 1, ErrorCategory::Grammar, &format!("e{i}"))).unwrap();
        }
        assert_eq!(m.short_term("t").iter().map(|r| r.message.as_str()).collect::<Vec<_>>(), ["e1", "e2", "e3"]);
        assert_eq!(m.buffer().len(), 1);
        assert_eq!(m.buffer()[0].message, "e0");
        assert_eq!(m.task_record_count("t"), 4);
    }

    #[test]
    fn iterations_never_decrease() {
        let m = store();
        m.record(rec("t", 3, ErrorCategory::Data, "a")).unwrap();
        m.record(rec("t", 2, ErrorCategory::Data, "b")).unwrap();
        assert_eq!(m.short_term("t")[1].iteration, 3);
    }

    #[test]
    fn records_survive_restart() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mem.db");
        {
            let m = MemoryStore::open(Some(&path), Arc::new(HashEmbedder::default())).unwrap();
            m.register_task("t", "total fees").unwrap();
            m.record(rec("t", 1, ErrorCategory::Grammar, "UnknownColumn('a')")).unwrap();
            m.record(rec("t", 1, ErrorCategory::Grammar, "UnknownColumn('b')")).unwrap();
            m.record(rec("u", 1, ErrorCategory::Data, "x")).unwrap();
            m.expire_task("t").unwrap();
            m.promote().unwrap();
        }
        let m = MemoryStore::open(Some(&path), Arc::new(HashEmbedder::default())).unwrap();
        assert_eq!(m.short_term("u").len(), 1);
        assert_eq!(m.long_term().len(), 1);
        assert_eq!(m.long_term()[0].task, "total fees");
    }

    #[test]
    fn promotion_groups_and_discards() {
        let m = store();
        m.register_task("t1", "average fee per merchant").unwrap();
        m.record(rec("t1", 1, ErrorCategory::Grammar, "(== [])")).unwrap();
        m.record(rec("t1", 1, ErrorCategory::Grammar, "UnknownColumn('H') at node 2")).unwrap();
        m.record(rec("t1", 2, ErrorCategory::Grammar, "UnknownColumn('fee_pct') at node 4")).unwrap();
        m.expire_task("t1").unwrap();
        let r = m.promote().unwrap();
        assert_eq!(r, PromotionReport { created: 1, discarded: 1, retained: 0 });
        assert_eq!(m.long_term()[0].memory, COLUMN_ADVICE);
        assert!(m.buffer().is_empty());
        assert_eq!(m.promote().unwrap(), PromotionReport::default());
    }

    #[test]
    fn template_summary_uses_common_prefix() {
        let m = store();
        m.record(rec("t", 1, ErrorCategory::Semantic, "plan misses the refund step in March")).unwrap();
        m.record(rec("t", 1, ErrorCategory::Semantic, "plan misses the refund step in April")).unwrap();
        m.expire_task("t").unwrap();
        m.promote().unwrap();
        assert_eq!(m.long_term()[0].memory, "Recurring semantic error: plan misses the refund step in");
    }

    #[test]
    fn failed_summary_retains_group() {
        let m = store().with_summarizer(Arc::new(UnavailableProvider::default()), "small");
        m.record(rec("t", 1, ErrorCategory::Grammar, "UnknownColumn('a')")).unwrap();
        m.record(rec("t", 1, ErrorCategory::Grammar, "UnknownColumn('b')")).unwrap();
        m.record(rec("t", 1, ErrorCategory::Data, "ConnectorError: gone")).unwrap();
        m.expire_task("t").unwrap();
        assert_eq!(m.promote().unwrap(), PromotionReport { created: 0, discarded: 1, retained: 2 });
        assert_eq!(m.buffer().len(), 2);
    }

    #[test]
    fn routing_by_role() {
        let m = store();
        m.record(rec("t", 1, ErrorCategory::Data, "d")).unwrap();
        m.record(rec("t", 1, ErrorCategory::Semantic, "s")).unwrap();
        m.record(rec("t", 1, ErrorCategory::Grammar, "g")).unwrap();
        for (role, want) in AgentRole::ALL.iter().zip(["d", "s", "g"]) {
            let got = m.retrieve_for_agent(*role, "t", "q").unwrap();
            assert_eq!(got.len(), 1);
            assert_eq!(got[0].text, want);
        }
    }
}

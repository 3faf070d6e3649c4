//! Dataset discovery, profiling and the semantic catalog of embedded text
//! segments.

mod connector;
mod index;
mod segment;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use rusqlite::{params, Connection};
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

pub use connector::{
    json_rows_table, text_table, typed_table, Connector, ConnectorDescription, ConnectorError, DatasetRef,
    FileConnector, MemoryConnector, RawData, SqlConnector, ToolSpec,
};
pub use index::{rank, DimensionMismatch, Segment, VectorIndex};
pub use segment::{
    detect_tables, segment_from_offsets, segment_rule, Level, TextPiece, TextTable, MAX_COARSE_CHARS, MAX_FINE_CHARS,
};

use crate::plan::{Schema, SchemaProvider};
use crate::prompts::Prompts;
use crate::provider::{ChatProvider, ChatRequest, Embedder, ProviderError};
use crate::table::{Table, Value};

/// Connector name under which tables extracted from documents are served.
pub const DERIVED_CONNECTOR: &str = "derived";
const SAMPLE_ROWS: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CatalogError {
    #[error(transparent)]
    Connector(#[from] ConnectorError),
    #[error("EmptyDataset('{0}')")]
    EmptyDataset(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error("ConnectorError: dataset '{0}' not found")]
    UnknownDataset(String),
    #[error("ConnectorError: no connector named '{0}'")]
    UnknownConnector(String),
    #[error("catalog store: {0}")]
    Store(String),
}

fn store_err(e: impl std::fmt::Display) -> CatalogError {
    CatalogError::Store(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Structured,
    Unstructured,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    pub connector: String,
    pub locator: String,
    pub format: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub name: String,
    pub kind: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Schema>,
    /// Up to five rows, as JSON scalars in schema order.
    #[serde(default)]
    pub sample_rows: Vec<Vec<Json>>,
    pub summary: String,
    pub source: Source,
    /// Linked catalog segments.
    #[serde(default)]
    pub segments: Vec<String>,
    #[serde(default)]
    pub row_count: Option<u64>,
}

impl DatasetProfile {
    /// Compact description used inside agent prompts.
    pub fn prompt_text(&self) -> String {
        let mut s =
            format!("- {} ({}, {} via {}", self.name, self.source.format, kind_name(self.kind), self.source.connector);
        if let Some(n) = self.row_count {
            s.push_str(&format!(", {n} rows"));
        }
        s.push_str(")\n");
        if let Some(schema) = &self.schema {
            s.push_str(&format!("  columns: {schema}\n"));
        }
        for r in self.sample_rows.iter().take(3) {
            s.push_str(&format!("  sample: {}\n", Json::Array(r.clone())));
        }
        s.push_str(&format!("  summary: {}", self.summary));
        s
    }
}

fn kind_name(k: DatasetKind) -> &'static str {
    match k {
        DatasetKind::Structured => "structured",
        DatasetKind::Unstructured => "unstructured",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentMode {
    #[default]
    Rule,
    Llm,
}

/// Result of profiling one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileOutcome {
    pub profile: DatasetProfile,
    pub segment_count: usize,
    /// Profiles of tables extracted from the dataset's text.
    pub derived: Vec<DatasetProfile>,
    /// Recoverable problems, such as a summary model that was unavailable.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub segment_id: String,
    pub dataset: String,
    pub level: Level,
    pub text: String,
    pub similarity: f64,
}

struct Llm {
    provider: Arc<dyn ChatProvider>,
    model: String,
}

/// Profiles, segments and extracted tables, persisted in one SQLite file.
/// Reads are concurrent; profiling takes an exclusive writer lock.
pub struct Catalog {
    db: Mutex<Connection>,
    connectors: BTreeMap<String, Arc<dyn Connector>>,
    embedder: Arc<dyn Embedder>,
    llm: Option<Llm>,
    prompts: Prompts,
    segment_mode: SegmentMode,
    profiles: RwLock<BTreeMap<String, DatasetProfile>>,
    index: RwLock<VectorIndex>,
    derived: RwLock<BTreeMap<String, Table>>,
    writer: Mutex<()>,
}

const SCHEMA_SQL: &str = "
CREATE TABLE IF NOT EXISTS profiles (name TEXT PRIMARY KEY, doc TEXT NOT NULL);
CREATE TABLE IF NOT EXISTS segments (
    segment_id TEXT PRIMARY KEY,
    dataset TEXT NOT NULL,
    level TEXT NOT NULL,
    text TEXT NOT NULL,
    embedding BLOB NOT NULL
);
CREATE TABLE IF NOT EXISTS derived_tables (dataset TEXT PRIMARY KEY, parent TEXT NOT NULL, doc TEXT NOT NULL);
";

/// Little-endian f64 encoding for embedding blobs.
pub fn encode_vector(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn decode_vector(b: &[u8]) -> Vec<f64> {
    b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect()
}

impl Catalog {
    /// Opens (or creates) the store at `path`; `None` keeps it in memory.
    pub fn open(path: Option<&Path>, embedder: Arc<dyn Embedder>) -> Result<Catalog, CatalogError> {
        let conn = match path {
            Some(p) => {
                if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent).map_err(store_err)?;
                }
                Connection::open(p).map_err(store_err)?
            }
            None => Connection::open_in_memory().map_err(store_err)?,
        };
        conn.execute_batch(SCHEMA_SQL).map_err(store_err)?;
        let dim = embedder.dim();
        let catalog = Catalog {
            db: Mutex::new(conn),
            connectors: BTreeMap::new(),
            embedder,
            llm: None,
            prompts: Prompts::default(),
            segment_mode: SegmentMode::Rule,
            profiles: RwLock::new(BTreeMap::new()),
            index: RwLock::new(VectorIndex::new(dim)),
            derived: RwLock::new(BTreeMap::new()),
            writer: Mutex::new(()),
        };
        catalog.load()?;
        Ok(catalog)
    }

    pub fn with_connector(mut self, connector: Arc<dyn Connector>) -> Self {
        self.connectors.insert(connector.name().to_string(), connector);
        self
    }

    /// Model used for summaries and (in llm mode) segmentation.
    pub fn with_llm(mut self, provider: Arc<dyn ChatProvider>, model: impl Into<String>) -> Self {
        self.llm = Some(Llm { provider, model: model.into() });
        self
    }

    pub fn with_prompts(mut self, prompts: Prompts) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn with_segment_mode(mut self, mode: SegmentMode) -> Self {
        self.segment_mode = mode;
        self
    }

    fn load(&self) -> Result<(), CatalogError> {
        let db = self.db.lock().expect("catalog db poisoned");
        let mut profiles = BTreeMap::new();
        let mut stmt = db.prepare("SELECT doc FROM profiles ORDER BY name").map_err(store_err)?;
        for doc in stmt.query_map([], |r| r.get::<_, String>(0)).map_err(store_err)? {
            let p: DatasetProfile = serde_json::from_str(&doc.map_err(store_err)?).map_err(store_err)?;
            profiles.insert(p.name.clone(), p);
        }
        let mut index = VectorIndex::new(self.embedder.dim());
        let mut stmt = db
            .prepare("SELECT segment_id, dataset, level, text, embedding FROM segments ORDER BY segment_id")
            .map_err(store_err)?;
        let rows = stmt
            .query_map([], |r| {
                Ok((
                    r.get::<_, String>(0)?,
                    r.get::<_, String>(1)?,
                    r.get::<_, String>(2)?,
                    r.get::<_, String>(3)?,
                    r.get::<_, Vec<u8>>(4)?,
                ))
            })
            .map_err(store_err)?;
        for row in rows {
            let (segment_id, dataset, level, text, emb) = row.map_err(store_err)?;
            let level = Level::from_name(&level).ok_or_else(|| store_err(format!("bad level {level}")))?;
            index.insert(Segment { segment_id, dataset, level, text, embedding: decode_vector(&emb) })?;
        }
        let mut derived = BTreeMap::new();
        let mut stmt = db.prepare("SELECT dataset, doc FROM derived_tables").map_err(store_err)?;
        for row in stmt.query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?))).map_err(store_err)? {
            let (name, doc) = row.map_err(store_err)?;
            let t = Table::from_json(&serde_json::from_str(&doc).map_err(store_err)?).map_err(store_err)?;
            derived.insert(name, t);
        }
        *self.profiles.write().expect("profiles poisoned") = profiles;
        *self.index.write().expect("index poisoned") = index;
        *self.derived.write().expect("derived poisoned") = derived;
        Ok(())
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn connector(&self, name: &str) -> Option<&Arc<dyn Connector>> {
        self.connectors.get(name)
    }

    pub fn connector_names(&self) -> Vec<String> {
        self.connectors.keys().cloned().collect()
    }

    /// Self-descriptions of every connector, including the derived-table one
    /// when such tables exist.
    pub fn describe_all(&self) -> Vec<ConnectorDescription> {
        let mut out: Vec<ConnectorDescription> = self.connectors.values().map(|c| c.describe()).collect();
        if !self.derived.read().expect("derived poisoned").is_empty() {
            out.push(MemoryConnector::new(DERIVED_CONNECTOR).describe());
        }
        out
    }

    pub fn profiles(&self) -> Vec<DatasetProfile> {
        self.profiles.read().expect("profiles poisoned").values().cloned().collect()
    }

    pub fn profile(&self, name: &str) -> Option<DatasetProfile> {
        self.profiles.read().expect("profiles poisoned").get(name).cloned()
    }

    pub fn segment_count(&self) -> usize {
        self.index.read().expect("index poisoned").len()
    }

    pub fn segments_of(&self, dataset: &str) -> Vec<Segment> {
        self.index.read().expect("index poisoned").segments().filter(|s| s.dataset == dataset).cloned().collect()
    }

    pub fn segment(&self, segment_id: &str) -> Option<Segment> {
        self.index.read().expect("index poisoned").get(segment_id).cloned()
    }

    /// Exact dense top-k search.
    pub fn search(&self, query: &[f64], k: usize, level: Option<Level>) -> Result<Vec<SearchHit>, CatalogError> {
        let index = self.index.read().expect("index poisoned");
        let hits = index.search(query, k, level)?;
        Ok(hits_to_segments(&index, hits))
    }

    /// Hybrid dense/sparse search for a natural-language query.
    pub fn search_text(&self, query: &str, k: usize, level: Option<Level>) -> Result<Vec<SearchHit>, CatalogError> {
        let q = self.embedder.embed_one(query)?;
        let index = self.index.read().expect("index poisoned");
        let hits = index.hybrid_search(&q, query, k, level)?;
        Ok(hits_to_segments(&index, hits))
    }

    /// Loads a dataset's full contents.
    pub fn scan_dataset(&self, name: &str) -> Result<Table, CatalogError> {
        let profile = self.profile(name).ok_or_else(|| CatalogError::UnknownDataset(name.to_string()))?;
        if profile.source.connector == DERIVED_CONNECTOR {
            return self
                .derived
                .read()
                .expect("derived poisoned")
                .get(name)
                .cloned()
                .ok_or_else(|| CatalogError::UnknownDataset(name.to_string()));
        }
        let c = self
            .connectors
            .get(&profile.source.connector)
            .ok_or_else(|| CatalogError::UnknownConnector(profile.source.connector.clone()))?;
        Ok(c.scan(&profile.source.locator)?)
    }

    pub fn run_sql(&self, connector: &str, sql: &str) -> Result<Table, CatalogError> {
        let c = self.connectors.get(connector).ok_or_else(|| CatalogError::UnknownConnector(connector.to_string()))?;
        Ok(c.query(sql)?)
    }

    /// Profiles every dataset of every connector. Documents go first so that
    /// structured profiles can link to their segments.
    pub fn profile_all(&self) -> Result<Vec<ProfileOutcome>, CatalogError> {
        let mut refs = Vec::new();
        for (name, c) in &self.connectors {
            for d in c.list_datasets()? {
                refs.push((name.clone(), d));
            }
        }
        refs.sort_by_key(|(c, d)| (d.format != "txt", c.clone(), d.name.clone()));
        refs.into_iter().map(|(c, d)| self.profile_dataset(&c, &d)).collect()
    }

    pub fn profile_dataset(&self, connector: &str, dataset: &DatasetRef) -> Result<ProfileOutcome, CatalogError> {
        let _writer = self.writer.lock().expect("catalog writer poisoned");
        let c = self.connectors.get(connector).ok_or_else(|| CatalogError::UnknownConnector(connector.to_string()))?;
        let source = Source {
            connector: connector.to_string(),
            locator: dataset.locator.clone(),
            format: dataset.format.clone(),
        };
        match c.data_profile(&dataset.locator)? {
            RawData::Structured(table) => {
                let mut warnings = Vec::new();
                let profile = self.structured_profile(&dataset.name, &table, source, &mut warnings)?;
                self.put_profile(&profile)?;
                Ok(ProfileOutcome { profile, segment_count: 0, derived: Vec::new(), warnings })
            }
            RawData::Unstructured(text) => self.profile_text(&dataset.name, &text, source),
        }
    }

    fn structured_profile(
        &self,
        name: &str,
        table: &Table,
        source: Source,
        warnings: &mut Vec<String>,
    ) -> Result<DatasetProfile, CatalogError> {
        if table.is_empty() {
            return Err(CatalogError::EmptyDataset(name.to_string()));
        }
        let sample_rows: Vec<Vec<Json>> =
            table.rows.iter().take(SAMPLE_ROWS).map(|r| r.iter().map(Value::to_json).collect()).collect();
        let descriptor = format!("{name} {}", table.schema.names().collect::<Vec<_>>().join(" "));
        let related =
            if self.segment_count() > 0 { self.search_text(&descriptor, 3, Some(Level::Coarse))? } else { Vec::new() };
        let fallback = format!(
            "Table '{name}' with {} rows and columns {}.",
            table.len(),
            table.schema.columns().iter().map(|c| format!("{} ({})", c.name, c.ty)).collect::<Vec<_>>().join(", ")
        );
        let mut details = format!("Columns: {}\nSample rows:\n", table.schema);
        for r in &sample_rows {
            details.push_str(&format!("{}\n", Json::Array(r.clone())));
        }
        let knowledge: String = related.iter().map(|h| format!("- {}\n", clip(&h.text, 300))).collect();
        let summary = self.summarize(name, "structured", &details, &knowledge, fallback, warnings);
        Ok(DatasetProfile {
            name: name.to_string(),
            kind: DatasetKind::Structured,
            schema: Some(table.schema.clone()),
            sample_rows,
            summary,
            source,
            segments: related.into_iter().map(|h| h.segment_id).collect(),
            row_count: Some(table.len() as u64),
        })
    }

    fn summarize(
        &self,
        name: &str,
        kind: &str,
        details: &str,
        knowledge: &str,
        fallback: String,
        warnings: &mut Vec<String>,
    ) -> String {
        let Some(llm) = &self.llm else { return fallback };
        let prompt = match self.prompts.render(
            "profile_summary",
            &[
                ("name", name),
                ("kind", kind),
                ("details", details),
                ("knowledge", if knowledge.is_empty() { "(none)" } else { knowledge }),
            ],
        ) {
            Ok(p) => p,
            Err(e) => {
                warnings.push(e.to_string());
                return fallback;
            }
        };
        match llm.provider.chat(&ChatRequest::new(&llm.model, prompt).with_max_tokens(200)) {
            Ok(r) if !r.text.trim().is_empty() => r.text.trim().to_string(),
            Ok(_) => {
                warnings.push(format!("empty summary for '{name}'; using the profile description"));
                fallback
            }
            Err(e) => {
                warnings.push(format!("{e} while summarizing '{name}'"));
                fallback
            }
        }
    }

    fn segment_document(&self, text: &str, warnings: &mut Vec<String>) -> Vec<TextPiece> {
        if let (SegmentMode::Llm, Some(llm)) = (self.segment_mode, &self.llm) {
            let prompt = self.prompts.render("segment", &[("text", text)]);
            let result = prompt
                .map_err(|e| e.to_string())
                .and_then(|p| llm.provider.chat(&ChatRequest::new(&llm.model, p)).map_err(|e| e.to_string()));
            match result {
                Ok(r) => match segment_from_offsets(text, &r.text) {
                    Some(pieces) => return pieces,
                    None => {
                        warnings.push("segmentation response had no usable offsets; using rule segmentation".into())
                    }
                },
                Err(e) => warnings.push(format!("{e}; using rule segmentation")),
            }
        }
        segment_rule(text)
    }

    fn profile_text(&self, name: &str, text: &str, source: Source) -> Result<ProfileOutcome, CatalogError> {
        if text.trim().is_empty() {
            return Err(CatalogError::EmptyDataset(name.to_string()));
        }
        let mut warnings = Vec::new();
        let pieces = self.segment_document(text, &mut warnings);
        let mut segments = Vec::new();
        for (i, p) in pieces.iter().enumerate() {
            let cid = format!("{name}#c{i:04}");
            segments.push((cid.clone(), Level::Coarse, &text[p.start..p.end]));
            for (j, (s, e)) in p.fine.iter().enumerate() {
                segments.push((format!("{cid}.f{j:03}"), Level::Fine, &text[*s..*e]));
            }
        }
        segments.retain(|(_, _, t)| !t.trim().is_empty());
        let texts: Vec<String> = segments.iter().map(|(_, _, t)| t.to_string()).collect();
        let embeddings = self.embedder.embed(&texts)?;
        let segments: Vec<Segment> = segments
            .into_iter()
            .zip(embeddings)
            .map(|((segment_id, level, t), embedding)| Segment {
                segment_id,
                dataset: name.to_string(),
                level,
                text: t.to_string(),
                embedding,
            })
            .collect();
        self.replace_segments(name, &segments)?;

        let mut derived = Vec::new();
        let mut derived_tables = Vec::new();
        for (k, tt) in detect_tables(text).into_iter().enumerate() {
            let dname = format!("{name}_table{}", k + 1);
            let src = Source {
                connector: DERIVED_CONNECTOR.into(),
                locator: format!("{name}#table{}", k + 1),
                format: "table".into(),
            };
            let mut p = self.structured_profile(&dname, &tt.table, src, &mut warnings)?;
            if self.llm.is_none() {
                if let Some(ctx) = context_line(text, tt.start) {
                    p.summary = format!("Table extracted from document '{name}' ({ctx}). {}", p.summary);
                } else {
                    p.summary = format!("Table extracted from document '{name}'. {}", p.summary);
                }
            }
            derived_tables.push((dname, tt.table));
            derived.push(p);
        }
        self.replace_derived(name, &derived_tables)?;

        let coarse: Vec<String> =
            segments.iter().filter(|s| s.level == Level::Coarse).map(|s| s.segment_id.clone()).collect();
        let first_line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or_default().trim();
        let fallback = format!(
            "Document '{name}' with {} characters in {} sections, beginning: {}",
            text.chars().count(),
            coarse.len(),
            clip(first_line, 120)
        );
        let details = format!("Text excerpt:\n{}", clip(text, 1500));
        let summary = self.summarize(name, "unstructured", &details, "", fallback, &mut warnings);
        let profile = DatasetProfile {
            name: name.to_string(),
            kind: DatasetKind::Unstructured,
            schema: None,
            sample_rows: Vec::new(),
            summary,
            source,
            segments: coarse,
            row_count: None,
        };
        self.put_profile(&profile)?;
        for p in &derived {
            self.put_profile(p)?;
        }
        Ok(ProfileOutcome { profile, segment_count: segments.len(), derived, warnings })
    }

    fn put_profile(&self, p: &DatasetProfile) -> Result<(), CatalogError> {
        let doc = serde_json::to_string(p).map_err(store_err)?;
        self.db
            .lock()
            .expect("catalog db poisoned")
            .execute("INSERT OR REPLACE INTO profiles (name, doc) VALUES (?1, ?2)", params![p.name, doc])
            .map_err(store_err)?;
        self.profiles.write().expect("profiles poisoned").insert(p.name.clone(), p.clone());
        Ok(())
    }

    fn replace_segments(&self, dataset: &str, segments: &[Segment]) -> Result<(), CatalogError> {
        let mut db = self.db.lock().expect("catalog db poisoned");
        let tx = db.transaction().map_err(store_err)?;
        tx.execute("DELETE FROM segments WHERE dataset = ?1", params![dataset]).map_err(store_err)?;
        for s in segments {
            tx.execute(
                "INSERT INTO segments (segment_id, dataset, level, text, embedding) VALUES (?1, ?2, ?3, ?4, ?5)",
                params![s.segment_id, s.dataset, s.level.name(), s.text, encode_vector(&s.embedding)],
            )
            .map_err(store_err)?;
        }
        tx.commit().map_err(store_err)?;
        let mut index = self.index.write().expect("index poisoned");
        index.remove_dataset(dataset);
        for s in segments {
            index.insert(s.clone())?;
        }
        Ok(())
    }

    fn replace_derived(&self, parent: &str, tables: &[(String, Table)]) -> Result<(), CatalogError> {
        let mut db = self.db.lock().expect("catalog db poisoned");
        let tx = db.transaction().map_err(store_err)?;
        let old: Vec<String> = {
            let mut stmt = tx.prepare("SELECT dataset FROM derived_tables WHERE parent = ?1").map_err(store_err)?;
            let names = stmt
                .query_map(params![parent], |r| r.get::<_, String>(0))
                .and_then(|it| it.collect::<Result<Vec<_>, _>>())
                .map_err(store_err)?;
            names
        };
        for name in &old {
            tx.execute("DELETE FROM profiles WHERE name = ?1", params![name]).map_err(store_err)?;
        }
        tx.execute("DELETE FROM derived_tables WHERE parent = ?1", params![parent]).map_err(store_err)?;
        for (name, t) in tables {
            tx.execute(
                "INSERT OR REPLACE INTO derived_tables (dataset, parent, doc) VALUES (?1, ?2, ?3)",
                params![name, parent, t.to_json().to_string()],
            )
            .map_err(store_err)?;
        }
        tx.commit().map_err(store_err)?;
        let mut derived = self.derived.write().expect("derived poisoned");
        let mut profiles = self.profiles.write().expect("profiles poisoned");
        for name in &old {
            derived.remove(name);
            profiles.remove(name);
        }
        for (name, t) in tables {
            derived.insert(name.clone(), t.clone());
        }
        Ok(())
    }
}

fn hits_to_segments(index: &VectorIndex, hits: Vec<(String, f64)>) -> Vec<SearchHit> {
    hits.into_iter()
        .filter_map(|(id, sim)| {
            index.get(&id).map(|s| SearchHit {
                segment_id: id,
                dataset: s.dataset.clone(),
                level: s.level,
                text: s.text.clone(),
                similarity: sim,
            })
        })
        .collect()
}

/// At most `n` characters, with an ellipsis when cut.
pub fn clip(text: &str, n: usize) -> String {
    let t = text.trim();
    if t.chars().count() <= n {
        t.to_string()
    } else {
        format!("{}...", t.chars().take(n).collect::<String>())
    }
}

/// Nearest non-empty, non-table line before byte offset `pos`.
fn context_line(text: &str, pos: usize) -> Option<String> {
    text[..pos]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(|l| clip(l.trim_start_matches('#').trim(), 120))
}

impl SchemaProvider for Catalog {
    fn dataset_schema(&self, dataset: &str) -> Option<Schema> {
        let p = self.profile(dataset)?;
        match p.kind {
            DatasetKind::Structured => p.schema,
            DatasetKind::Unstructured => Some(text_table("").schema),
        }
    }

    fn dataset_names(&self) -> Vec<String> {
        self.profiles.read().expect("profiles poisoned").keys().cloned().collect()
    }

    fn query_schema(&self, connector: &str, sql: &str) -> Result<Schema, String> {
        let c = self.connectors.get(connector).ok_or_else(|| format!("no connector named '{connector}'"))?;
        c.query_schema(sql).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{HashEmbedder, MockProvider, MockRule, Responder, UnavailableProvider};

    const MANUAL: &str = "# Fee manual\n\nMerchants pay a fee per transaction.\n\nFee schedule by card type:\n\n| card_type | fee_rate |\n|---|---|\n| credit | 0.02 |\n| debit | 0.01 |\n\nFees are settled monthly.\n";

    fn fixture_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("manual.txt"), MANUAL).unwrap();
        std::fs::write(
            dir.path().join("merchants.csv"),
            "merchant,country,mcc\nacme,US,5411\nbeta,FR,5812\ngamma,US,5411\ndelta,DE,7011\neps,US,5999\nzeta,FR,5411\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("empty.csv"), "a,b\n").unwrap();
        dir
    }

    fn catalog(dir: &Path, store: Option<&Path>) -> Catalog {
        Catalog::open(store, Arc::new(HashEmbedder::default()))
            .unwrap()
            .with_connector(Arc::new(FileConnector::new("files", dir)))
    }

    #[test]
    fn profiles_csv_text_and_extracted_table() {
        let dir = fixture_dir();
        let c = catalog(dir.path(), None);
        let files = c.connector("files").unwrap().clone();
        let manual = files.list_datasets().unwrap().into_iter().find(|d| d.name == "manual").unwrap();
        let out = c.profile_dataset("files", &manual).unwrap();
        assert_eq!(out.profile.kind, DatasetKind::Unstructured);
        assert_eq!(out.derived.len(), 1);
        assert_eq!(out.derived[0].name, "manual_table1");
        assert!(out.derived[0].summary.contains("Fee schedule by card type"));
        assert_eq!(c.scan_dataset("manual_table1").unwrap().len(), 2);
        let coarse: String =
            c.segments_of("manual").iter().filter(|s| s.level == Level::Coarse).map(|s| s.text.as_str()).collect();
        assert_eq!(coarse, MANUAL.trim_end_matches(|c: char| c.is_whitespace()).to_string() + "\n");

        let merchants = files.list_datasets().unwrap().into_iter().find(|d| d.name == "merchants").unwrap();
        let p = c.profile_dataset("files", &merchants).unwrap().profile;
        assert_eq!(p.kind, DatasetKind::Structured);
        assert_eq!(p.schema.as_ref().unwrap().len(), 3);
        assert_eq!(p.sample_rows.len(), 5);
        assert!(!p.summary.is_empty());
        assert!(!p.segments.is_empty());

        let empty = files.list_datasets().unwrap().into_iter().find(|d| d.name == "empty").unwrap();
        assert_eq!(c.profile_dataset("files", &empty), Err(CatalogError::EmptyDataset("empty".into())));
    }

    #[test]
    fn reprofiling_is_idempotent_and_persistent() {
        let dir = fixture_dir();
        std::fs::remove_file(dir.path().join("empty.csv")).unwrap();
        let store = dir.path().join("store/catalog.db");
        let first = {
            let c = catalog(dir.path(), Some(&store));
            c.profile_all().unwrap();
            (c.profiles(), c.segments_of("manual"))
        };
        let c = catalog(dir.path(), Some(&store));
        assert_eq!((c.profiles(), c.segments_of("manual")), first);
        c.profile_all().unwrap();
        assert_eq!((c.profiles(), c.segments_of("manual")), first);
        assert_eq!(c.dataset_names(), ["manual", "manual_table1", "merchants"]);
    }

    #[test]
    fn llm_summary_and_fallbacks() {
        let dir = fixture_dir();
        let mock = MockProvider::from_rules([
            MockRule::when(&["Summarize the dataset"], Responder::Fixed { text: "Merchant master data.".into() }),
            MockRule::when(&["Split the document"], Responder::Fixed { text: "[0, 14]".into() }),
        ])
        .unwrap();
        let c = catalog(dir.path(), None).with_llm(Arc::new(mock), "small").with_segment_mode(SegmentMode::Llm);
        let out = c.profile_all();
        let err = out.unwrap_err();
        assert_eq!(err, CatalogError::EmptyDataset("empty".into()));
        let manual = c.profile("manual").unwrap();
        assert_eq!(manual.summary, "Merchant master data.");
        assert_eq!(manual.segments.len(), 2);

        let down = catalog(dir.path(), None)
            .with_llm(Arc::new(UnavailableProvider::default()), "small")
            .with_segment_mode(SegmentMode::Llm);
        let files = down.connector("files").unwrap().clone();
        let manual = files.list_datasets().unwrap().into_iter().find(|d| d.name == "manual").unwrap();
        let out = down.profile_dataset("files", &manual).unwrap();
        assert!(out.warnings.iter().any(|w| w.contains("rule segmentation")));
        assert!(out.profile.summary.starts_with("Document 'manual'"));
    }
}

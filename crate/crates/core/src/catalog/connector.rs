use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rusqlite::types::ValueRef;
use serde::Serialize;
use serde_json::{json, Value as Json};

use crate::plan::{Column, Schema, SemType};
use crate::table::{infer_type, Table, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("ConnectorError: {connector}: {message}")]
pub struct ConnectorError {
    pub connector: String,
    pub message: String,
}

impl ConnectorError {
    pub fn new(connector: &str, message: impl Into<String>) -> Self {
        ConnectorError { connector: connector.to_string(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolSpec {
    pub tool_name: String,
    pub params_schema: Json,
}

/// Self-description a connector hands to the planning agent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectorDescription {
    pub name: String,
    pub capabilities: Vec<String>,
    pub tools: Vec<ToolSpec>,
}

/// A dataset a connector can serve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRef {
    pub name: String,
    pub locator: String,
    pub format: String,
}

/// Raw content returned by `data_profile`.
#[derive(Debug, Clone, PartialEq)]
pub enum RawData {
    Structured(Table),
    Unstructured(String),
}

pub trait Connector: Send + Sync {
    fn name(&self) -> &str;

    fn describe(&self) -> ConnectorDescription;

    fn list_datasets(&self) -> Result<Vec<DatasetRef>, ConnectorError>;

    fn data_profile(&self, locator: &str) -> Result<RawData, ConnectorError>;

    /// Whole dataset as a table.
    fn scan(&self, locator: &str) -> Result<Table, ConnectorError> {
        match self.data_profile(locator)? {
            RawData::Structured(t) => Ok(t),
            RawData::Unstructured(text) => Ok(text_table(&text)),
        }
    }

    fn query(&self, sql: &str) -> Result<Table, ConnectorError> {
        let _ = sql;
        Err(ConnectorError::new(self.name(), "connector does not speak SQL"))
    }

    fn query_schema(&self, sql: &str) -> Result<Schema, ConnectorError> {
        self.query(sql).map(|t| t.schema)
    }
}

/// Unstructured text scanned as a table: one row per non-empty line.
pub fn text_table(text: &str) -> Table {
    let schema = Schema::new(vec![Column::new("line_no", SemType::Integer), Column::new("text", SemType::Text)])
        .expect("static schema");
    let rows = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| vec![Value::Int(i as i64 + 1), Value::Text(l.to_string())])
        .collect();
    Table { schema, rows }
}

/// Builds a typed table from string cells, inferring each column's type.
pub fn typed_table(headers: Vec<String>, cells: Vec<Vec<String>>) -> Result<Table, String> {
    let mut columns = Vec::with_capacity(headers.len());
    for (i, h) in headers.iter().enumerate() {
        let ty = infer_type(
            cells.iter().map(move |r| r.get(i).map(String::as_str).unwrap_or("")).collect::<Vec<_>>().into_iter(),
        );
        columns.push(Column::new(h.clone(), ty));
    }
    let schema = Schema::new(columns).map_err(|e| e.to_string())?;
    let rows = cells
        .iter()
        .map(|r| {
            schema
                .columns()
                .iter()
                .enumerate()
                .map(|(i, c)| Value::parse_as(r.get(i).map(String::as_str).unwrap_or(""), c.ty).unwrap_or(Value::Null))
                .collect()
        })
        .collect();
    Table::new(schema, rows).map_err(|e| e.to_string())
}

const FILE_FORMATS: &[&str] = &["csv", "json", "txt", "md"];

/// Serves csv, json and txt files from one directory. Dataset names are file
/// stems; locators are file names relative to the root.
pub struct FileConnector {
    name: String,
    root: PathBuf,
}

impl FileConnector {
    pub fn new(name: impl Into<String>, root: impl Into<PathBuf>) -> Self {
        FileConnector { name: name.into(), root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn err(&self, message: impl Into<String>) -> ConnectorError {
        ConnectorError::new(&self.name, message)
    }

    fn read(&self, locator: &str) -> Result<String, ConnectorError> {
        let path = self.root.join(locator);
        std::fs::read_to_string(&path).map_err(|e| self.err(format!("cannot read {}: {e}", path.display())))
    }

    fn parse_csv(&self, text: &str) -> Result<Table, ConnectorError> {
        let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(text.as_bytes());
        let headers: Vec<String> =
            reader.headers().map_err(|e| self.err(e.to_string()))?.iter().map(|h| h.trim().to_string()).collect();
        let mut cells = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| self.err(e.to_string()))?;
            cells.push(rec.iter().map(str::to_string).collect());
        }
        typed_table(headers, cells).map_err(|e| self.err(e))
    }

    fn parse_json(&self, text: &str) -> Result<Table, ConnectorError> {
        let doc: Json = serde_json::from_str(text).map_err(|e| self.err(format!("invalid JSON: {e}")))?;
        let items = match &doc {
            Json::Array(a) => a.as_slice(),
            Json::Object(o) => match o.get("rows") {
                Some(Json::Array(a)) => a.as_slice(),
                _ => return Err(self.err("JSON dataset must be an array of objects")),
            },
            _ => return Err(self.err("JSON dataset must be an array of objects")),
        };
        json_rows_table(items).map_err(|e| self.err(e))
    }
}

/// Schema for schemaless JSON records: keys in first-seen order, each typed
/// by the narrowest type all its values fit.
pub fn json_rows_table(items: &[Json]) -> Result<Table, String> {
    let mut keys: Vec<String> = Vec::new();
    for item in items {
        let obj = item.as_object().ok_or("JSON rows must be objects")?;
        for k in obj.keys() {
            if !keys.contains(k) {
                keys.push(k.clone());
            }
        }
    }
    let mut columns = Vec::new();
    for k in &keys {
        let vals: Vec<&Json> = items.iter().filter_map(|i| i.get(k)).filter(|v| !v.is_null()).collect();
        let ty = if vals.is_empty() {
            SemType::Text
        } else if vals.iter().all(|v| v.is_i64()) {
            SemType::Integer
        } else if vals.iter().all(|v| v.is_number()) {
            SemType::Real
        } else if vals.iter().all(|v| v.is_boolean()) {
            SemType::Boolean
        } else if vals.iter().all(|v| v.as_str().is_some_and(|s| Value::parse_as(s, SemType::Date).is_some())) {
            SemType::Date
        } else {
            SemType::Text
        };
        columns.push(Column::new(k.clone(), ty));
    }
    let schema = Schema::new(columns).map_err(|e| e.to_string())?;
    let rows = items
        .iter()
        .map(|item| {
            schema
                .columns()
                .iter()
                .map(|c| match item.get(&c.name) {
                    None | Some(Json::Null) => Value::Null,
                    Some(Json::String(s)) if c.ty == SemType::Text => Value::Text(s.clone()),
                    Some(v) => Value::from_json(v, c.ty).unwrap_or_else(|| Value::Text(v.to_string())),
                })
                .collect()
        })
        .collect();
    Table::new(schema, rows).map_err(|e| e.to_string())
}

impl Connector for FileConnector {
    fn name(&self) -> &str {
        &self.name
    }

    fn describe(&self) -> ConnectorDescription {
        ConnectorDescription {
            name: self.name.clone(),
            capabilities: vec!["scan".into(), "profile".into()],
            tools: vec![ToolSpec {
                tool_name: "FileScan".into(),
                params_schema: json!({
                    "type": "object",
                    "properties": {
                        "dataset": {"type": "string"},
                        "format": {"type": "string", "enum": ["csv", "json", "txt"]}
                    },
                    "required": ["dataset", "format"]
                }),
            }],
        }
    }

    fn list_datasets(&self) -> Result<Vec<DatasetRef>, ConnectorError> {
        let entries = std::fs::read_dir(&self.root)
            .map_err(|e| self.err(format!("cannot read directory {}: {e}", self.root.display())))?;
        let mut out = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| self.err(e.to_string()))?.path();
            let Some(ext) = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) else { continue };
            if !path.is_file() || !FILE_FORMATS.contains(&ext.as_str()) {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let locator = path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let format = if ext == "md" { "txt".to_string() } else { ext };
            out.push(DatasetRef { name: stem, locator, format });
        }
        out.sort_by(|a, b| a.name.cmp(&b.name).then(a.locator.cmp(&b.locator)));
        Ok(out)
    }

    fn data_profile(&self, locator: &str) -> Result<RawData, ConnectorError> {
        let text = self.read(locator)?;
        let ext = Path::new(locator).extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        match ext.as_str() {
            "csv" => self.parse_csv(&text).map(RawData::Structured),
            "json" => self.parse_json(&text).map(RawData::Structured),
            "txt" | "md" => Ok(RawData::Unstructured(text)),
            other => Err(self.err(format!("unsupported file format '{other}'"))),
        }
    }
}

/// SQL connector over an embedded SQLite database. The locator is either a
/// database file or a `.sql` script loaded into an in-memory database.
pub struct SqlConnector {
    name: String,
    conn: Mutex<rusqlite::Connection>,
    query_cache: Mutex<HashMap<String, Result<Table, ConnectorError>>>,
}

fn sql_type(decl: Option<&str>) -> Option<SemType> {
    let d = decl?.to_ascii_uppercase();
    Some(if d.contains("INT") {
        SemType::Integer
    } else if d.contains("BOOL") {
        SemType::Boolean
    } else if d.contains("DATE") {
        SemType::Date
    } else if d.contains("REAL")
        || d.contains("FLOA")
        || d.contains("DOUB")
        || d.contains("NUMERIC")
        || d.contains("DECIMAL")
    {
        SemType::Real
    } else if d.contains("CHAR") || d.contains("TEXT") || d.contains("CLOB") {
        SemType::Text
    } else {
        return None;
    })
}

fn sql_value(v: ValueRef<'_>) -> Value {
    match v {
        ValueRef::Null => Value::Null,
        ValueRef::Integer(i) => Value::Int(i),
        ValueRef::Real(r) => Value::Real(r),
        ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => Value::Text(hex::encode(b)),
    }
}

fn coerce(v: Value, ty: SemType) -> Value {
    match (v, ty) {
        (Value::Null, _) => Value::Null,
        (Value::Int(i), SemType::Real) => Value::Real(i as f64),
        (Value::Int(i), SemType::Boolean) => Value::Bool(i != 0),
        (Value::Text(s), SemType::Date) => Value::parse_as(&s, SemType::Date).unwrap_or(Value::Null),
        (Value::Int(i), SemType::Text) => Value::Text(i.to_string()),
        (Value::Real(r), SemType::Text) => Value::Text(crate::plan::expr::format_real(r)),
        (Value::Real(r), SemType::Integer) if r.fract() == 0.0 => Value::Int(r as i64),
        (Value::Text(s), SemType::Integer | SemType::Real | SemType::Boolean) => {
            Value::parse_as(&s, ty).unwrap_or(Value::Null)
        }
        (v, _) => v,
    }
}

impl SqlConnector {
    pub fn open(name: impl Into<String>, locator: &Path) -> Result<Self, ConnectorError> {
        let name = name.into();
        let is_script = locator.extension().and_then(|e| e.to_str()) == Some("sql");
        let conn = if is_script {
            let script = std::fs::read_to_string(locator)
                .map_err(|e| ConnectorError::new(&name, format!("cannot read {}: {e}", locator.display())))?;
            let conn = rusqlite::Connection::open_in_memory().map_err(|e| ConnectorError::new(&name, e.to_string()))?;
            conn.execute_batch(&script)
                .map_err(|e| ConnectorError::new(&name, format!("{}: {e}", locator.display())))?;
            conn
        } else {
            if !locator.exists() {
                return Err(ConnectorError::new(&name, format!("database {} not found", locator.display())));
            }
            rusqlite::Connection::open_with_flags(locator, rusqlite::OpenFlags::SQLITE_OPEN_READ_ONLY)
                .map_err(|e| ConnectorError::new(&name, format!("{}: {e}", locator.display())))?
        };
        Ok(SqlConnector { name, conn: Mutex::new(conn), query_cache: Mutex::new(HashMap::new()) })
    }

    pub fn from_script(name: impl Into<String>, script: &str) -> Result<Self, ConnectorError> {
        let name = name.into();
        let conn = rusqlite::Connection::open_in_memory().map_err(|e| ConnectorError::new(&name, e.to_string()))?;
        conn.execute_batch(script).map_err(|e| ConnectorError::new(&name, e.to_string()))?;
        Ok(SqlConnector { name, conn: Mutex::new(conn), query_cache: Mutex::new(HashMap::new()) })
    }

    fn run(&self, sql: &str) -> Result<Table, ConnectorError> {
        let conn = self.conn.lock().expect("sql connection poisoned");
        let err = |e: rusqlite::Error| ConnectorError::new(&self.name, e.to_string());
        let mut stmt = conn.prepare(sql).map_err(err)?;
        if !stmt.readonly() {
            return Err(ConnectorError::new(&self.name, "only read-only statements are allowed"));
        }
        let names: Vec<String> = stmt.column_names().into_iter().map(str::to_string).collect();
        let decls: Vec<Option<SemType>> = stmt.columns().iter().map(|c| sql_type(c.decl_type())).collect();
        let mut raw: Vec<Vec<Value>> = Vec::new();
        let mut rows = stmt.query([]).map_err(err)?;
        while let Some(row) = rows.next().map_err(err)? {
            raw.push((0..names.len()).map(|i| row.get_ref(i).map(sql_value).unwrap_or(Value::Null)).collect());
        }
        let mut columns = Vec::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            let ty = decls[i].unwrap_or_else(|| {
                let mut ty: Option<SemType> = None;
                for r in &raw {
                    let t = match &r[i] {
                        Value::Null => continue,
                        v => v.sem_type().unwrap_or(SemType::Text),
                    };
                    ty = Some(match (ty, t) {
                        (None, t) => t,
                        (Some(a), b) if a == b => a,
                        (Some(SemType::Integer), SemType::Real) | (Some(SemType::Real), SemType::Integer) => {
                            SemType::Real
                        }
                        _ => SemType::Text,
                    });
                }
                ty.unwrap_or(SemType::Text)
            });
            columns.push(Column::new(n.clone(), ty));
        }
        let schema = Schema::new(columns).map_err(|e| ConnectorError::new(&self.name, e.to_string()))?;
        let rows = raw
            .into_iter()
            .map(|r| r.into_iter().zip(schema.columns()).map(|(v, c)| coerce(v, c.ty)).collect())
            .collect();
        Table::new(schema, rows).map_err(|e| ConnectorError::new(&self.name, e.to_string()))
    }

    fn tables(&self) -> Result<Vec<String>, ConnectorError> {
        let conn = self.conn.lock().expect("sql connection poisoned");
        let mut stmt = conn
            .prepare("SELECT name FROM sqlite_master WHERE type IN ('table','view') AND name NOT LIKE 'sqlite_%' ORDER BY name")
            .map_err(|e| ConnectorError::new(&self.name, e.to_string()))?;
        let names = stmt
            .query_map([], |r| r.get::<_, String>(0))
            .and_then(|it| it.collect::<Result<Vec<_>, _>>())
            .map_err(|e| ConnectorError::new(&self.name, e.to_string()))?;
        Ok(names)
    }
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

impl Connector for SqlConnector {
    fn name(&self) -> &str {
        &self.name
    }

    fn describe(&self) -> ConnectorDescription {
        ConnectorDescription {
            name: self.name.clone(),
            capabilities: vec!["sql".into(), "profile".into()],
            tools: vec![ToolSpec {
                tool_name: "DBScan".into(),
                params_schema: json!({
                    "type": "object",
                    "properties": {
                        "connector": {"type": "string", "const": self.name},
                        "sql_text": {"type": "string", "description": "read-only SQLite query"}
                    },
                    "required": ["connector", "sql_text"]
                }),
            }],
        }
    }

    fn list_datasets(&self) -> Result<Vec<DatasetRef>, ConnectorError> {
        Ok(self
            .tables()?
            .into_iter()
            .map(|t| DatasetRef { name: t.clone(), locator: t, format: "sql".into() })
            .collect())
    }

    fn data_profile(&self, locator: &str) -> Result<RawData, ConnectorError> {
        self.query(&format!("SELECT * FROM {}", quote_ident(locator))).map(RawData::Structured)
    }

    fn query(&self, sql: &str) -> Result<Table, ConnectorError> {
        if let Some(hit) = self.query_cache.lock().expect("query cache poisoned").get(sql) {
            return hit.clone();
        }
        let result = self.run(sql);
        self.query_cache.lock().expect("query cache poisoned").insert(sql.to_string(), result.clone());
        result
    }
}

/// Tables that exist only inside the catalog, such as ones extracted from
/// documents. Locators are dataset names.
#[derive(Default)]
pub struct MemoryConnector {
    name: String,
    tables: BTreeMap<String, Table>,
}

impl MemoryConnector {
    pub fn new(name: impl Into<String>) -> Self {
        MemoryConnector { name: name.into(), tables: BTreeMap::new() }
    }

    pub fn with_table(mut self, name: impl Into<String>, table: Table) -> Self {
        self.tables.insert(name.into(), table);
        self
    }
}

impl Connector for MemoryConnector {
    fn name(&self) -> &str {
        &self.name
    }

    fn describe(&self) -> ConnectorDescription {
        ConnectorDescription {
            name: self.name.clone(),
            capabilities: vec!["scan".into(), "profile".into()],
            tools: vec![ToolSpec {
                tool_name: "FileScan".into(),
                params_schema: json!({"type": "object", "properties": {"dataset": {"type": "string"}}, "required": ["dataset"]}),
            }],
        }
    }

    fn list_datasets(&self) -> Result<Vec<DatasetRef>, ConnectorError> {
        Ok(self
            .tables
            .keys()
            .map(|k| DatasetRef { name: k.clone(), locator: k.clone(), format: "table".into() })
            .collect())
    }

    fn data_profile(&self, locator: &str) -> Result<RawData, ConnectorError> {
        self.tables
            .get(locator)
            .cloned()
            .map(RawData::Structured)
            .ok_or_else(|| ConnectorError::new(&self.name, format!("dataset '{locator}' not found")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_json_files_are_typed() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("m.csv"), "id,name,score,joined\n1,a,1.5,2024-01-02\n2,b,,2024-02-03\n")
            .unwrap();
        std::fs::write(dir.path().join("j.json"), r#"[{"k":1,"v":"x"},{"k":2,"v":null,"w":true}]"#).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "hello\n\nworld\n").unwrap();
        std::fs::write(dir.path().join("skip.bin"), "x").unwrap();
        let c = FileConnector::new("files", dir.path());
        let names: Vec<String> = c.list_datasets().unwrap().into_iter().map(|d| d.name).collect();
        assert_eq!(names, ["j", "m", "notes"]);
        let RawData::Structured(t) = c.data_profile("m.csv").unwrap() else { panic!() };
        assert_eq!(t.schema.to_string(), "[id:integer, name:text, score:real, joined:date]");
        assert_eq!(t.rows[1][2], Value::Null);
        let RawData::Structured(j) = c.data_profile("j.json").unwrap() else { panic!() };
        assert_eq!(j.schema.to_string(), "[k:integer, v:text, w:boolean]");
        assert_eq!(c.scan("notes.txt").unwrap().len(), 2);
        assert!(c.data_profile("missing.csv").unwrap_err().to_string().starts_with("ConnectorError"));
    }

    #[test]
    fn sql_script_connector() {
        let c = SqlConnector::from_script(
            "wh",
            "CREATE TABLE p(id INTEGER, amount REAL, day DATE); INSERT INTO p VALUES (1, 2, '2024-01-01'), (2, 3.5, NULL);",
        )
        .unwrap();
        assert_eq!(c.list_datasets().unwrap()[0].name, "p");
        let t = c.query("SELECT id, amount * 2 AS twice, day FROM p ORDER BY id").unwrap();
        assert_eq!(t.schema.to_string(), "[id:integer, twice:real, day:date]");
        assert_eq!(t.rows[0][1], Value::Real(4.0));
        let e = c.query("SELECT nope FROM p").unwrap_err();
        assert!(e.message.contains("no such column"), "{e}");
        assert!(c.query("DELETE FROM p").is_err());
    }
}

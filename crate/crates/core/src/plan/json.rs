//! Plan documents: `{"version": 1, "root": <node>}` with
//! `node = {"id": int, "op": string, "attrs": object, "children": [node]}`.
//!
//! Serialization is canonical: object keys are emitted in sorted order and
//! children in plan order, so structurally equal plans produce identical bytes.

use std::collections::HashSet;

use serde_json::{json, Map, Value as J};

use crate::plan::expr::{Expr, ExprSyntaxError};
use crate::plan::node::{
    AggFunc, AggItem, JoinMode, NodeId, Operator, OperatorKind, PlanNode, ProjectItem, SortDirection,
};
use crate::plan::schema::Schema;

pub const PLAN_FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("DecodeError at byte {offset}: {message}")]
    Decode { offset: usize, message: String },
    #[error("UnknownOperator('{op}') at node {node_id}")]
    UnknownOperator { node_id: NodeId, op: String },
    #[error("ArityError at node {node_id}: {op} takes {expected}, found {found}")]
    Arity { node_id: NodeId, op: OperatorKind, expected: String, found: usize },
    #[error("InvalidAttribute at node {node_id}: {message}")]
    InvalidAttribute { node_id: NodeId, message: String },
    #[error("ExpressionSyntax at node {node_id} in '{attr}': {source}")]
    Expression { node_id: NodeId, attr: String, source: ExprSyntaxError },
    #[error("DuplicateNodeId({0})")]
    DuplicateNodeId(NodeId),
}

/// Renders the canonical compact document.
pub fn serialize_plan(plan: &PlanNode) -> String {
    plan_document(plan).to_string()
}

/// Canonical document, pretty-printed (for files meant to be read by people).
pub fn serialize_plan_pretty(plan: &PlanNode) -> String {
    serde_json::to_string_pretty(&plan_document(plan)).expect("plan document serializes")
}

pub fn plan_document(plan: &PlanNode) -> J {
    json!({ "version": PLAN_FORMAT_VERSION, "root": node_to_json(plan) })
}

pub fn node_to_json(node: &PlanNode) -> J {
    json!({
        "id": node.id,
        "op": node.kind().name(),
        "attrs": J::Object(attrs_to_json(&node.op)),
        "children": node.children.iter().map(node_to_json).collect::<Vec<_>>(),
    })
}

fn strings(v: &[String]) -> J {
    J::Array(v.iter().map(|s| J::String(s.clone())).collect())
}

pub fn attrs_to_json(op: &Operator) -> Map<String, J> {
    let mut m = Map::new();
    let mut put = |k: &str, v: J| {
        m.insert(k.to_string(), v);
    };
    match op {
        Operator::FileScan { dataset, format } => {
            put("dataset", json!(dataset));
            put("format", json!(format));
        }
        Operator::DbScan { connector, sql_text, columns } => {
            put("connector", json!(connector));
            put("sql_text", json!(sql_text));
            if let Some(cols) = columns {
                put("columns", serde_json::to_value(cols).expect("schema serializes"));
            }
        }
        Operator::Filter { predicate } => put("predicate", json!(predicate.to_string())),
        Operator::Project { items } => {
            put("items", J::Array(items.iter().map(|i| json!({"name": i.name, "expr": i.expr.to_string()})).collect()))
        }
        Operator::Join { mode, condition } | Operator::Merge { mode, condition } => {
            put("mode", json!(mode.name()));
            put("condition", json!(condition.to_string()));
        }
        Operator::Aggregate { keys, aggs } => {
            put("keys", strings(keys));
            put(
                "aggs",
                J::Array(
                    aggs.iter()
                        .map(|a| {
                            let mut o = Map::new();
                            if let Some(f) = a.func {
                                o.insert("func".into(), json!(f.name()));
                            }
                            o.insert("column".into(), json!(a.column));
                            o.insert("out_name".into(), json!(a.out_name));
                            J::Object(o)
                        })
                        .collect(),
                ),
            );
        }
        Operator::Union => {}
        Operator::Sort { keys, directions } => {
            put("keys", strings(keys));
            put(
                "directions",
                J::Array(
                    directions.iter().map(|d| json!(if *d == SortDirection::Asc { "asc" } else { "desc" })).collect(),
                ),
            );
        }
        Operator::Limit { k } => put("k", json!(k)),
        Operator::SemExtract { source_columns, target_columns, instruction_prompt } => {
            put("source_columns", strings(source_columns));
            put("target_columns", strings(target_columns));
            put("instruction_prompt", json!(instruction_prompt));
        }
        Operator::SemFilter { columns, predicate_prompt } => {
            put("columns", strings(columns));
            put("predicate_prompt", json!(predicate_prompt));
        }
        Operator::SemGroup { columns, label_prompt, max_labels, label_column } => {
            put("columns", strings(columns));
            put("label_prompt", json!(label_prompt));
            put("max_labels", json!(max_labels));
            put("label_column", json!(label_column));
        }
        Operator::SemJoin { left_cols, right_cols, match_prompt } => {
            put("left_cols", strings(left_cols));
            put("right_cols", strings(right_cols));
            put("match_prompt", json!(match_prompt));
        }
        Operator::Script { attrs } => m = attrs.clone(),
    }
    m
}

/// Short attribute rendering for explain output.
pub fn attrs_summary(op: &Operator) -> String {
    J::Object(attrs_to_json(op)).to_string()
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(text.len());
        }
        offset += l.len();
    }
    text.len()
}

/// Parses a plan document into its root node.
pub fn parse_plan(text: &str) -> Result<PlanNode, PlanError> {
    let doc: J = serde_json::from_str(text)
        .map_err(|e| PlanError::Decode { offset: byte_offset(text, e.line(), e.column()), message: e.to_string() })?;
    let decode = |message: &str| PlanError::Decode { offset: 0, message: message.to_string() };
    let obj = doc.as_object().ok_or_else(|| decode("plan document must be a JSON object"))?;
    match obj.get("version").and_then(J::as_u64) {
        Some(PLAN_FORMAT_VERSION) => {}
        Some(v) => return Err(decode(&format!("unsupported plan format version {v}"))),
        None => return Err(decode("missing integer field 'version'")),
    }
    let root = obj.get("root").ok_or_else(|| decode("missing field 'root'"))?;
    let mut seen = HashSet::new();
    parse_node(root, &mut seen)
}

/// Parses a single node object (no document envelope).
pub fn parse_node_value(value: &J) -> Result<PlanNode, PlanError> {
    parse_node(value, &mut HashSet::new())
}

fn parse_node(v: &J, seen: &mut HashSet<NodeId>) -> Result<PlanNode, PlanError> {
    let decode = |message: String| PlanError::Decode { offset: 0, message };
    let obj = v.as_object().ok_or_else(|| decode(format!("plan node must be an object, found {v}")))?;
    let id = obj
        .get("id")
        .and_then(J::as_u64)
        .and_then(|i| NodeId::try_from(i).ok())
        .ok_or_else(|| decode("plan node needs a non-negative integer 'id'".into()))?;
    if !seen.insert(id) {
        return Err(PlanError::DuplicateNodeId(id));
    }
    let op_name = obj.get("op").and_then(J::as_str).ok_or_else(|| decode(format!("node {id} needs a string 'op'")))?;
    let kind = OperatorKind::from_name(op_name)
        .ok_or_else(|| PlanError::UnknownOperator { node_id: id, op: op_name.to_string() })?;
    let empty = Map::new();
    let attrs = match obj.get("attrs") {
        None => &empty,
        Some(J::Object(m)) => m,
        Some(_) => return Err(decode(format!("node {id}: 'attrs' must be an object"))),
    };
    let children_json = match obj.get("children") {
        None => &[][..],
        Some(J::Array(a)) => a.as_slice(),
        Some(_) => return Err(decode(format!("node {id}: 'children' must be an array"))),
    };
    for key in obj.keys() {
        if !matches!(key.as_str(), "id" | "op" | "attrs" | "children") {
            return Err(decode(format!("node {id}: unexpected field '{key}'")));
        }
    }
    if !kind.arity().accepts(children_json.len()) {
        return Err(PlanError::Arity {
            node_id: id,
            op: kind,
            expected: kind.arity().to_string(),
            found: children_json.len(),
        });
    }
    let op = parse_attrs(id, kind, attrs)?;
    let children = children_json.iter().map(|c| parse_node(c, seen)).collect::<Result<Vec<_>, _>>()?;
    Ok(PlanNode { id, op, children })
}

struct Attrs<'a> {
    id: NodeId,
    map: &'a Map<String, J>,
}

impl<'a> Attrs<'a> {
    fn bad(&self, message: String) -> PlanError {
        PlanError::InvalidAttribute { node_id: self.id, message }
    }

    fn only(&self, allowed: &[&str]) -> Result<(), PlanError> {
        for k in self.map.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(self.bad(format!("unknown attribute '{k}' (allowed: {})", allowed.join(", "))));
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Result<&'a J, PlanError> {
        self.map.get(key).ok_or_else(|| self.bad(format!("missing attribute '{key}'")))
    }

    fn string(&self, key: &str) -> Result<String, PlanError> {
        self.get(key)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| self.bad(format!("attribute '{key}' must be a string")))
    }

    fn uint(&self, key: &str) -> Result<u64, PlanError> {
        self.get(key)?.as_u64().ok_or_else(|| self.bad(format!("attribute '{key}' must be a non-negative integer")))
    }

    fn strings(&self, key: &str) -> Result<Vec<String>, PlanError> {
        let arr = self.get(key)?.as_array().ok_or_else(|| self.bad(format!("attribute '{key}' must be a list")))?;
        arr.iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| self.bad(format!("attribute '{key}' must be a list of strings")))
    }

    fn expr(&self, key: &str) -> Result<Expr, PlanError> {
        let text = self.string(key)?;
        Expr::parse(&text).map_err(|source| PlanError::Expression { node_id: self.id, attr: key.into(), source })
    }

    fn mode(&self) -> Result<JoinMode, PlanError> {
        let s = self.string("mode")?;
        JoinMode::from_name(&s).ok_or_else(|| self.bad(format!("join mode '{s}' is not one of inner|left|semi|anti")))
    }
}

fn parse_attrs(id: NodeId, kind: OperatorKind, map: &Map<String, J>) -> Result<Operator, PlanError> {
    let a = Attrs { id, map };
    Ok(match kind {
        OperatorKind::FileScan => {
            a.only(&["dataset", "format"])?;
            Operator::FileScan { dataset: a.string("dataset")?, format: a.string("format")? }
        }
        OperatorKind::DbScan => {
            a.only(&["connector", "sql_text", "columns"])?;
            let columns = match map.get("columns") {
                None => None,
                Some(v) => Some(
                    serde_json::from_value::<Schema>(v.clone())
                        .map_err(|e| a.bad(format!("attribute 'columns': {e}")))?,
                ),
            };
            Operator::DbScan { connector: a.string("connector")?, sql_text: a.string("sql_text")?, columns }
        }
        OperatorKind::Filter => {
            a.only(&["predicate"])?;
            Operator::Filter { predicate: a.expr("predicate")? }
        }
        OperatorKind::Project => {
            a.only(&["items"])?;
            let arr = a.get("items")?.as_array().ok_or_else(|| a.bad("attribute 'items' must be a list".into()))?;
            let mut items = Vec::with_capacity(arr.len());
            for item in arr {
                let name = item.get("name").and_then(J::as_str);
                let expr = item.get("expr").and_then(J::as_str);
                let (Some(name), Some(expr)) = (name, expr) else {
                    return Err(a.bad(format!("project item {item} needs string 'name' and 'expr'")));
                };
                let expr = Expr::parse(expr).map_err(|source| PlanError::Expression {
                    node_id: id,
                    attr: "items".into(),
                    source,
                })?;
                items.push(ProjectItem { name: name.to_string(), expr });
            }
            Operator::Project { items }
        }
        OperatorKind::Join | OperatorKind::Merge => {
            a.only(&["mode", "condition"])?;
            let mode = a.mode()?;
            let condition = a.expr("condition")?;
            if kind == OperatorKind::Join {
                Operator::Join { mode, condition }
            } else {
                Operator::Merge { mode, condition }
            }
        }
        OperatorKind::Aggregate => {
            a.only(&["keys", "aggs"])?;
            let keys = a.strings("keys")?;
            let arr = a.get("aggs")?.as_array().ok_or_else(|| a.bad("attribute 'aggs' must be a list".into()))?;
            let mut aggs = Vec::with_capacity(arr.len());
            for item in arr {
                let func = match item.get("func") {
                    None | Some(J::Null) => None,
                    Some(J::String(f)) => Some(AggFunc::from_name(f).ok_or_else(|| {
                        a.bad(format!("aggregate function '{f}' is not one of count|sum|avg|min|max"))
                    })?),
                    Some(other) => return Err(a.bad(format!("aggregate 'func' must be a string, found {other}"))),
                };
                let column = item.get("column").and_then(J::as_str);
                let out_name = item.get("out_name").and_then(J::as_str);
                let (Some(column), Some(out_name)) = (column, out_name) else {
                    return Err(a.bad(format!("aggregate item {item} needs string 'column' and 'out_name'")));
                };
                aggs.push(AggItem { func, column: column.to_string(), out_name: out_name.to_string() });
            }
            Operator::Aggregate { keys, aggs }
        }
        OperatorKind::Union => {
            a.only(&[])?;
            Operator::Union
        }
        OperatorKind::Sort => {
            a.only(&["keys", "directions"])?;
            let keys = a.strings("keys")?;
            let directions = match map.get("directions") {
                None => vec![SortDirection::Asc; keys.len()],
                Some(_) => a
                    .strings("directions")?
                    .iter()
                    .map(|d| match d.to_ascii_lowercase().as_str() {
                        "asc" => Ok(SortDirection::Asc),
                        "desc" => Ok(SortDirection::Desc),
                        other => Err(a.bad(format!("sort direction '{other}' is not asc|desc"))),
                    })
                    .collect::<Result<_, _>>()?,
            };
            Operator::Sort { keys, directions }
        }
        OperatorKind::Limit => {
            a.only(&["k"])?;
            Operator::Limit { k: a.uint("k")? }
        }
        OperatorKind::SemExtract => {
            a.only(&["source_columns", "target_columns", "instruction_prompt"])?;
            Operator::SemExtract {
                source_columns: a.strings("source_columns")?,
                target_columns: a.strings("target_columns")?,
                instruction_prompt: a.string("instruction_prompt")?,
            }
        }
        OperatorKind::SemFilter => {
            a.only(&["columns", "predicate_prompt"])?;
            Operator::SemFilter { columns: a.strings("columns")?, predicate_prompt: a.string("predicate_prompt")? }
        }
        OperatorKind::SemGroup => {
            a.only(&["columns", "label_prompt", "max_labels", "label_column"])?;
            let max_labels = u32::try_from(a.uint("max_labels")?).map_err(|_| a.bad("max_labels too large".into()))?;
            let label_column = match map.get("label_column") {
                None => "label".to_string(),
                Some(_) => a.string("label_column")?,
            };
            Operator::SemGroup {
                columns: a.strings("columns")?,
                label_prompt: a.string("label_prompt")?,
                max_labels,
                label_column,
            }
        }
        OperatorKind::SemJoin => {
            a.only(&["left_cols", "right_cols", "match_prompt"])?;
            Operator::SemJoin {
                left_cols: a.strings("left_cols")?,
                right_cols: a.strings("right_cols")?,
                match_prompt: a.string("match_prompt")?,
            }
        }
        OperatorKind::Script => Operator::Script { attrs: map.clone() },
    })
}

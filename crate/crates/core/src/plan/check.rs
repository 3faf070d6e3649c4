//! Schema inference and grammar validation.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::plan::expr::{BinaryOp, Expr, ExprType, TypeError};
use crate::plan::node::{AggFunc, NodeId, Operator, PlanNode};
use crate::plan::schema::{Column, Schema, SemType};

/// Where scans get their schemas from. The catalog is the production
/// implementation; a plain map is enough for tests.
pub trait SchemaProvider {
    fn dataset_schema(&self, dataset: &str) -> Option<Schema>;

    fn dataset_names(&self) -> Vec<String>;

    /// Result schema of `sql` run on `connector`, without running it to completion.
    fn query_schema(&self, connector: &str, sql: &str) -> Result<Schema, String>;
}

impl SchemaProvider for BTreeMap<String, Schema> {
    fn dataset_schema(&self, dataset: &str) -> Option<Schema> {
        self.get(dataset).cloned()
    }

    fn dataset_names(&self) -> Vec<String> {
        self.keys().cloned().collect()
    }

    fn query_schema(&self, connector: &str, _sql: &str) -> Result<Schema, String> {
        Err(format!("no SQL connector named '{connector}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaError {
    #[error("UnknownDataset('{dataset}') at node {node_id}")]
    UnknownDataset { dataset: String, node_id: NodeId },
    #[error("UnknownColumn('{column}') at node {node_id}")]
    UnknownColumn { column: String, node_id: NodeId },
    #[error("TypeMismatch({expr}) at node {node_id}: {detail}")]
    TypeMismatch { expr: String, node_id: NodeId, detail: String },
    #[error("ArityError at node {node_id}: {message}")]
    Arity { node_id: NodeId, message: String },
    #[error("InvalidPlan at node {node_id}: {message}")]
    Invalid { node_id: NodeId, message: String },
}

impl SchemaError {
    pub fn node_id(&self) -> NodeId {
        match self {
            SchemaError::UnknownDataset { node_id, .. }
            | SchemaError::UnknownColumn { node_id, .. }
            | SchemaError::TypeMismatch { node_id, .. }
            | SchemaError::Arity { node_id, .. }
            | SchemaError::Invalid { node_id, .. } => *node_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorCategory {
    Data,
    Semantic,
    Grammar,
}

impl ErrorCategory {
    pub fn name(self) -> &'static str {
        match self {
            ErrorCategory::Data => "data",
            ErrorCategory::Semantic => "semantic",
            ErrorCategory::Grammar => "grammar",
        }
    }

    pub fn from_name(s: &str) -> Option<ErrorCategory> {
        Some(match s.trim().to_ascii_lowercase().as_str() {
            "data" => ErrorCategory::Data,
            "semantic" => ErrorCategory::Semantic,
            "grammar" => ErrorCategory::Grammar,
            _ => return None,
        })
    }

    pub const ALL: [ErrorCategory; 3] = [ErrorCategory::Data, ErrorCategory::Semantic, ErrorCategory::Grammar];
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationError {
    pub node_id: NodeId,
    pub category: ErrorCategory,
    pub message: String,
    /// One sentence telling the plan author how to fix it.
    pub hint: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} Hint: {}", self.message, self.hint)
    }
}

/// Output schema of the plan root.
pub fn infer_schema(plan: &PlanNode, provider: &dyn SchemaProvider) -> Result<Schema, SchemaError> {
    let mut errors = Vec::new();
    match check_node(plan, provider, &mut errors) {
        Some(s) if errors.is_empty() => Ok(s),
        _ => Err(errors.into_iter().next().map(|(e, _)| e).expect("failed check records an error")),
    }
}

/// All grammar errors in the plan; empty iff the plan is well formed.
pub fn validate_grammar(plan: &PlanNode, provider: &dyn SchemaProvider) -> Vec<ValidationError> {
    let mut errors = Vec::new();
    check_node(plan, provider, &mut errors);
    let mut seen = std::collections::HashSet::new();
    for n in plan.iter() {
        if !seen.insert(n.id) {
            errors.push((
                SchemaError::Invalid { node_id: n.id, message: format!("DuplicateNodeId({})", n.id) },
                "Give every plan node a distinct integer id.".to_string(),
            ));
        }
    }
    errors
        .into_iter()
        .map(|(e, hint)| ValidationError {
            node_id: e.node_id(),
            category: ErrorCategory::Grammar,
            message: e.to_string(),
            hint,
        })
        .collect()
}

type Errors = Vec<(SchemaError, String)>;

fn list(names: impl Iterator<Item = impl AsRef<str>>) -> String {
    let v: Vec<String> = names.map(|n| n.as_ref().to_string()).collect();
    if v.is_empty() {
        "(none)".into()
    } else {
        v.join(", ")
    }
}

fn unknown_column(column: &str, node_id: NodeId, input: &Schema) -> (SchemaError, String) {
    (
        SchemaError::UnknownColumn { column: column.to_string(), node_id },
        format!(
            "Ensure the columns referred in the expression exist in the datasets; available columns at node {node_id}: {}.",
            list(input.names())
        ),
    )
}

fn type_error(e: TypeError, node_id: NodeId, input: &Schema) -> (SchemaError, String) {
    match e {
        TypeError::UnknownColumn(c) => unknown_column(&c, node_id, input),
        TypeError::Mismatch { expr, detail } => {
            let hint = format!("Make the operand types agree in {expr} ({detail}).");
            (SchemaError::TypeMismatch { expr, node_id, detail }, hint)
        }
    }
}

fn invalid(node_id: NodeId, message: impl Into<String>, hint: impl Into<String>) -> (SchemaError, String) {
    (SchemaError::Invalid { node_id, message: message.into() }, hint.into())
}

fn check_predicate(expr: &Expr, schema: &Schema, node_id: NodeId, errors: &mut Errors) {
    match expr.check(schema) {
        Ok(ExprType::Scalar(SemType::Boolean)) | Ok(ExprType::Null) => {}
        Ok(other) => errors.push((
            SchemaError::TypeMismatch {
                expr: expr.to_string(),
                node_id,
                detail: format!("predicate must be boolean, found {other:?}"),
            },
            format!("Rewrite {expr} as a boolean condition (comparison, 'in', 'and', 'or', 'not')."),
        )),
        Err(e) => errors.push(type_error(e, node_id, schema)),
    }
}

fn require_columns(cols: &[String], input: &Schema, node_id: NodeId, errors: &mut Errors) -> bool {
    let mut ok = true;
    for c in cols {
        if !input.contains(c) {
            errors.push(unknown_column(c, node_id, input));
            ok = false;
        }
    }
    ok
}

fn is_equi_condition(cond: &Expr, left: &Schema, right: &Schema) -> bool {
    cond.conjuncts().iter().all(|c| match c {
        Expr::Binary { op: BinaryOp::Eq, left: l, right: r } => match (l.as_ref(), r.as_ref()) {
            (Expr::Column(a), Expr::Column(b)) => {
                (left.contains(a) && right.contains(b)) || (left.contains(b) && right.contains(a))
            }
            _ => false,
        },
        _ => false,
    })
}

fn check_node(node: &PlanNode, provider: &dyn SchemaProvider, errors: &mut Errors) -> Option<Schema> {
    let id = node.id;
    let kind = node.kind();
    if !kind.arity().accepts(node.children.len()) {
        errors.push((
            SchemaError::Arity {
                node_id: id,
                message: format!("{kind} takes {}, found {}", kind.arity(), node.children.len()),
            },
            format!("Give {kind} node {id} {}.", kind.arity()),
        ));
        for c in &node.children {
            check_node(c, provider, errors);
        }
        return None;
    }
    let inputs: Vec<Option<Schema>> = node.children.iter().map(|c| check_node(c, provider, errors)).collect();
    if inputs.iter().any(Option::is_none) {
        return None;
    }
    let inputs: Vec<Schema> = inputs.into_iter().map(Option::unwrap).collect();
    let before = errors.len();
    let out = check_operator(node, &inputs, provider, errors);
    if errors.len() > before {
        None
    } else {
        out
    }
}

fn check_operator(
    node: &PlanNode,
    inputs: &[Schema],
    provider: &dyn SchemaProvider,
    errors: &mut Errors,
) -> Option<Schema> {
    let id = node.id;
    match &node.op {
        Operator::FileScan { dataset, .. } => match provider.dataset_schema(dataset) {
            Some(s) => Some(s),
            None => {
                errors.push((
                    SchemaError::UnknownDataset { dataset: dataset.clone(), node_id: id },
                    format!("Scan one of the registered datasets: {}.", list(provider.dataset_names().iter())),
                ));
                None
            }
        },
        Operator::DbScan { connector, sql_text, columns } => {
            if sql_text.trim().is_empty() {
                errors.push(invalid(id, "DBScan has empty sql_text", "Write the SQL query the connector should run."));
                return None;
            }
            if let Some(cols) = columns {
                return Some(cols.clone());
            }
            match provider.query_schema(connector, sql_text) {
                Ok(s) => Some(s),
                Err(msg) => {
                    errors.push((
                        SchemaError::UnknownDataset { dataset: connector.clone(), node_id: id },
                        format!("The connector rejected the query ({msg}); fix the SQL or declare its columns."),
                    ));
                    None
                }
            }
        }
        Operator::Script { attrs } => match attrs.get("columns") {
            Some(v) => match serde_json::from_value::<Schema>(v.clone()) {
                Ok(s) => Some(s),
                Err(e) => {
                    errors.push(invalid(
                        id,
                        format!("Script columns: {e}"),
                        "Declare Script output columns as [{name, type}].",
                    ));
                    None
                }
            },
            None => {
                errors.push(invalid(
                    id,
                    "Script operator declares no output columns",
                    "Add a 'columns' attribute listing the script's output columns, or use predefined operators.",
                ));
                None
            }
        },
        Operator::Filter { predicate } => {
            check_predicate(predicate, &inputs[0], id, errors);
            Some(inputs[0].clone())
        }
        Operator::Project { items } => {
            let input = &inputs[0];
            let mut out = Schema::empty();
            if items.is_empty() {
                errors.push(invalid(id, "Project has no items", "List at least one output column."));
            }
            for item in items {
                let ty = match item.expr.check(input) {
                    Ok(ExprType::Scalar(t)) => t,
                    Ok(ExprType::Null) => SemType::Text,
                    Ok(ExprType::List(_)) => {
                        errors.push((
                            SchemaError::TypeMismatch {
                                expr: item.expr.to_string(),
                                node_id: id,
                                detail: "a list is not a column value".into(),
                            },
                            "Project items must be scalar expressions.".into(),
                        ));
                        continue;
                    }
                    Err(e) => {
                        errors.push(type_error(e, id, input));
                        continue;
                    }
                };
                if item.name.is_empty() || out.push(Column::new(item.name.clone(), ty)).is_err() {
                    errors.push(invalid(
                        id,
                        format!("duplicate or empty output column '{}'", item.name),
                        "Give every projected column a distinct non-empty name.",
                    ));
                }
            }
            Some(out)
        }
        Operator::Join { mode, condition } | Operator::Merge { mode, condition } => {
            let (left, right) = (&inputs[0], &inputs[1]);
            let combined = match left.concat(right) {
                Ok(s) => s,
                Err(dup) => {
                    errors.push(invalid(
                        id,
                        format!("ambiguous column '{}' appears in both inputs", dup.0),
                        format!("Rename '{}' on one side with a Project before joining.", dup.0),
                    ));
                    return None;
                }
            };
            check_predicate(condition, &combined, id, errors);
            if matches!(node.op, Operator::Join { .. }) && !is_equi_condition(condition, left, right) {
                errors.push(invalid(
                    id,
                    format!("Join condition {condition} is not a conjunction of left/right column equalities"),
                    "Use equalities like left_col == right_col joined by 'and', or use Merge for general conditions.",
                ));
            }
            Some(match mode {
                crate::plan::node::JoinMode::Semi | crate::plan::node::JoinMode::Anti => left.clone(),
                _ => combined,
            })
        }
        Operator::Aggregate { keys, aggs } => {
            let input = &inputs[0];
            require_columns(keys, input, id, errors);
            let mut out = Schema::empty();
            for k in keys {
                if let Some(c) = input.column(k) {
                    if out.push(c.clone()).is_err() {
                        errors.push(invalid(id, format!("duplicate group key '{k}'"), "List each group key once."));
                    }
                }
            }
            for a in aggs {
                let col_ty = if a.column == "*" {
                    if a.func != Some(AggFunc::Count) {
                        errors.push(invalid(
                            id,
                            format!("'*' used with {}", a.func.map(|f| f.name()).unwrap_or("no function")),
                            "Only count accepts '*'; name a column for other aggregate functions.",
                        ));
                        continue;
                    }
                    None
                } else {
                    match input.column(&a.column) {
                        Some(c) => Some(c.ty),
                        None => {
                            errors.push(unknown_column(&a.column, id, input));
                            continue;
                        }
                    }
                };
                let ty = match (a.func, col_ty) {
                    (None, Some(t)) => {
                        if !keys.contains(&a.column) {
                            errors.push(invalid(
                                id,
                                format!("column '{}' is neither grouped nor aggregated", a.column),
                                format!(
                                    "Add '{}' to the group keys or wrap it in an aggregate function (count/sum/avg/min/max).",
                                    a.column
                                ),
                            ));
                            continue;
                        }
                        t
                    }
                    (Some(AggFunc::Count), _) => SemType::Integer,
                    (Some(AggFunc::Avg), Some(t)) | (Some(AggFunc::Sum), Some(t)) => {
                        if !matches!(t, SemType::Integer | SemType::Real) {
                            errors.push((
                                SchemaError::TypeMismatch {
                                    expr: format!("{}({})", a.func.unwrap().name(), a.column),
                                    node_id: id,
                                    detail: format!("operand is {t}, expected integer or real"),
                                },
                                format!("Apply {} only to numeric columns.", a.func.unwrap().name()),
                            ));
                            continue;
                        }
                        if a.func == Some(AggFunc::Avg) {
                            SemType::Real
                        } else {
                            t
                        }
                    }
                    (Some(_), Some(t)) => t,
                    (_, None) => unreachable!("'*' handled above"),
                };
                if out.push(Column::new(a.out_name.clone(), ty)).is_err() {
                    errors.push(invalid(
                        id,
                        format!("duplicate output column '{}'", a.out_name),
                        "Give each aggregate output a distinct out_name.",
                    ));
                }
            }
            Some(out)
        }
        Operator::Union => {
            let first = &inputs[0];
            for (i, s) in inputs.iter().enumerate().skip(1) {
                if s != first {
                    errors.push(invalid(
                        id,
                        format!("Union input {i} has schema {s}, expected {first}"),
                        "Project every Union input to the same column names and types.",
                    ));
                }
            }
            Some(first.clone())
        }
        Operator::Sort { keys, directions } => {
            if keys.is_empty() {
                errors.push(invalid(id, "Sort has no keys", "Name at least one sort key."));
            }
            if directions.len() != keys.len() {
                errors.push(invalid(
                    id,
                    format!("{} sort keys but {} directions", keys.len(), directions.len()),
                    "Give one direction (asc/desc) per sort key.",
                ));
            }
            require_columns(keys, &inputs[0], id, errors);
            Some(inputs[0].clone())
        }
        Operator::Limit { .. } => Some(inputs[0].clone()),
        Operator::SemExtract { source_columns, target_columns, instruction_prompt } => {
            let input = &inputs[0];
            if source_columns.is_empty() || source_columns.len() != target_columns.len() {
                errors.push(invalid(
                    id,
                    format!("{} source columns for {} target columns", source_columns.len(), target_columns.len()),
                    "Pair every target column with the source column it is extracted from.",
                ));
            }
            if instruction_prompt.trim().is_empty() {
                errors.push(invalid(id, "empty instruction_prompt", "Describe what to extract."));
            }
            require_columns(source_columns, input, id, errors);
            let mut out = input.clone();
            for t in target_columns {
                if t.is_empty() || out.push(Column::new(t.clone(), SemType::Text)).is_err() {
                    errors.push(invalid(
                        id,
                        format!("target column '{t}' already exists"),
                        "Choose new, distinct names for extracted columns.",
                    ));
                }
            }
            Some(out)
        }
        Operator::SemFilter { columns, predicate_prompt } => {
            if columns.is_empty() {
                errors.push(invalid(id, "SemFilter has no columns", "Name the text columns the condition reads."));
            }
            if predicate_prompt.trim().is_empty() {
                errors.push(invalid(id, "empty predicate_prompt", "State the condition rows must satisfy."));
            }
            require_columns(columns, &inputs[0], id, errors);
            Some(inputs[0].clone())
        }
        Operator::SemGroup { columns, label_prompt, max_labels, label_column } => {
            if columns.is_empty() {
                errors.push(invalid(id, "SemGroup has no columns", "Name the columns to group by meaning."));
            }
            if *max_labels == 0 {
                errors.push(invalid(id, "max_labels is 0", "Allow at least one label."));
            }
            if label_prompt.trim().is_empty() {
                errors.push(invalid(id, "empty label_prompt", "Describe how rows should be labelled."));
            }
            require_columns(columns, &inputs[0], id, errors);
            let mut out = inputs[0].clone();
            if out.push(Column::new(label_column.clone(), SemType::Text)).is_err() {
                errors.push(invalid(
                    id,
                    format!("label column '{label_column}' already exists"),
                    "Pick a new name for the label column.",
                ));
            }
            Some(out)
        }
        Operator::SemJoin { left_cols, right_cols, match_prompt } => {
            let (left, right) = (&inputs[0], &inputs[1]);
            if left_cols.is_empty() || right_cols.is_empty() {
                errors.push(invalid(
                    id,
                    "SemJoin needs columns on both sides",
                    "Name the columns compared on each side.",
                ));
            }
            if match_prompt.trim().is_empty() {
                errors.push(invalid(id, "empty match_prompt", "Describe when two rows match."));
            }
            require_columns(left_cols, left, id, errors);
            require_columns(right_cols, right, id, errors);
            match left.concat(right) {
                Ok(s) => Some(s),
                Err(dup) => {
                    errors.push(invalid(
                        id,
                        format!("ambiguous column '{}' appears in both inputs", dup.0),
                        format!("Rename '{}' on one side with a Project before joining.", dup.0),
                    ));
                    None
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::node::{AggItem, JoinMode, ProjectItem};

    fn catalog() -> BTreeMap<String, Schema> {
        let mut m = BTreeMap::new();
        m.insert(
            "t".to_string(),
            Schema::new(vec![Column::new("a", SemType::Integer), Column::new("b", SemType::Text)]).unwrap(),
        );
        m.insert(
            "u".to_string(),
            Schema::new(vec![Column::new("k", SemType::Integer), Column::new("v", SemType::Real)]).unwrap(),
        );
        m
    }

    fn scan(id: NodeId, ds: &str) -> PlanNode {
        PlanNode::leaf(id, Operator::FileScan { dataset: ds.into(), format: "csv".into() })
    }

    #[test]
    fn project_outputs_listed_columns() {
        let p = PlanNode::new(
            2,
            Operator::Project { items: vec![ProjectItem { name: "a".into(), expr: Expr::col("a") }] },
            vec![scan(1, "t")],
        );
        assert_eq!(infer_schema(&p, &catalog()).unwrap().to_string(), "[a:integer]");
    }

    #[test]
    fn sem_extract_appends_text_targets() {
        let p = PlanNode::new(
            2,
            Operator::SemExtract {
                source_columns: vec!["b".into()],
                target_columns: vec!["city".into()],
                instruction_prompt: "the city".into(),
            },
            vec![scan(1, "t")],
        );
        assert_eq!(infer_schema(&p, &catalog()).unwrap().to_string(), "[a:integer, b:text, city:text]");
    }

    #[test]
    fn filter_on_missing_column() {
        let p =
            PlanNode::new(2, Operator::Filter { predicate: Expr::parse("h in ['H']").unwrap() }, vec![scan(1, "t")]);
        assert_eq!(infer_schema(&p, &catalog()), Err(SchemaError::UnknownColumn { column: "h".into(), node_id: 2 }));
    }

    #[test]
    fn unknown_dataset() {
        assert!(matches!(infer_schema(&scan(1, "nope"), &catalog()), Err(SchemaError::UnknownDataset { .. })));
    }

    fn valid_five_nodes() -> PlanNode {
        let join = PlanNode::new(
            3,
            Operator::Join { mode: JoinMode::Inner, condition: Expr::parse("a == k").unwrap() },
            vec![scan(1, "t"), scan(2, "u")],
        );
        let filter = PlanNode::new(4, Operator::Filter { predicate: Expr::parse("v > 1.5").unwrap() }, vec![join]);
        PlanNode::new(
            5,
            Operator::Aggregate {
                keys: vec!["b".into()],
                aggs: vec![AggItem { func: Some(AggFunc::Sum), column: "v".into(), out_name: "total".into() }],
            },
            vec![filter],
        )
    }

    #[test]
    fn valid_plan_has_no_errors() {
        let p = valid_five_nodes();
        assert_eq!(p.node_count(), 5);
        assert_eq!(validate_grammar(&p, &catalog()), vec![]);
        assert_eq!(infer_schema(&p, &catalog()).unwrap().to_string(), "[b:text, total:real]");
    }

    #[test]
    fn empty_list_comparison_yields_one_error_with_operand_types() {
        let p = PlanNode::new(2, Operator::Filter { predicate: Expr::parse("a == []").unwrap() }, vec![scan(1, "t")]);
        let errs = validate_grammar(&p, &catalog());
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].node_id, 2);
        assert_eq!(errs[0].category, ErrorCategory::Grammar);
        assert!(errs[0].hint.contains("integer") && errs[0].hint.contains("empty list"), "{}", errs[0].hint);
    }

    #[test]
    fn non_grouped_output_column_is_one_error() {
        let p = PlanNode::new(
            2,
            Operator::Aggregate {
                keys: vec!["b".into()],
                aggs: vec![
                    AggItem { func: None, column: "a".into(), out_name: "a".into() },
                    AggItem { func: Some(AggFunc::Count), column: "*".into(), out_name: "n".into() },
                ],
            },
            vec![scan(1, "t")],
        );
        let errs = validate_grammar(&p, &catalog());
        assert_eq!(errs.len(), 1, "{errs:?}");
        assert!(errs[0].message.contains("neither grouped nor aggregated"));
    }

    #[test]
    fn join_rules() {
        let same = PlanNode::new(
            3,
            Operator::Join { mode: JoinMode::Inner, condition: Expr::parse("a == a").unwrap() },
            vec![scan(1, "t"), scan(2, "t")],
        );
        assert!(validate_grammar(&same, &catalog())[0].message.contains("ambiguous column"));
        let theta = PlanNode::new(
            3,
            Operator::Join { mode: JoinMode::Inner, condition: Expr::parse("a < k").unwrap() },
            vec![scan(1, "t"), scan(2, "u")],
        );
        assert_eq!(validate_grammar(&theta, &catalog()).len(), 1);
        let merge = PlanNode::new(
            3,
            Operator::Merge { mode: JoinMode::Semi, condition: Expr::parse("a < k").unwrap() },
            vec![scan(1, "t"), scan(2, "u")],
        );
        assert_eq!(infer_schema(&merge, &catalog()).unwrap().to_string(), "[a:integer, b:text]");
    }

    #[test]
    fn arity_violation_reported() {
        let p = PlanNode::new(3, Operator::Limit { k: 1 }, vec![scan(1, "t"), scan(2, "t")]);
        let errs = validate_grammar(&p, &catalog());
        assert!(errs[0].message.starts_with("ArityError at node 3"));
    }
}

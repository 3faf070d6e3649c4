use std::fmt;

use crate::plan::expr::Expr;
use crate::plan::schema::Schema;

pub type NodeId = u32;

/// Closed set of operator tags. `Script` is the opaque escape hatch for
/// generated code: accepted by the IR, passed through by the optimizer and
/// refused by the executor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OperatorKind {
    FileScan,
    DbScan,
    Filter,
    Project,
    Join,
    Aggregate,
    Union,
    Merge,
    Sort,
    Limit,
    SemExtract,
    SemFilter,
    SemGroup,
    SemJoin,
    Script,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Exactly(usize),
    AtLeast(usize),
}

impl Arity {
    pub fn accepts(self, n: usize) -> bool {
        match self {
            Arity::Exactly(k) => n == k,
            Arity::AtLeast(k) => n >= k,
        }
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Exactly(1) => write!(f, "exactly 1 child"),
            Arity::Exactly(k) => write!(f, "exactly {k} children"),
            Arity::AtLeast(k) => write!(f, "at least {k} children"),
        }
    }
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 15] = [
        OperatorKind::FileScan,
        OperatorKind::DbScan,
        OperatorKind::Filter,
        OperatorKind::Project,
        OperatorKind::Join,
        OperatorKind::Aggregate,
        OperatorKind::Union,
        OperatorKind::Merge,
        OperatorKind::Sort,
        OperatorKind::Limit,
        OperatorKind::SemExtract,
        OperatorKind::SemFilter,
        OperatorKind::SemGroup,
        OperatorKind::SemJoin,
        OperatorKind::Script,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::FileScan => "FileScan",
            OperatorKind::DbScan => "DBScan",
            OperatorKind::Filter => "Filter",
            OperatorKind::Project => "Project",
            OperatorKind::Join => "Join",
            OperatorKind::Aggregate => "Aggregate",
            OperatorKind::Union => "Union",
            OperatorKind::Merge => "Merge",
            OperatorKind::Sort => "Sort",
            OperatorKind::Limit => "Limit",
            OperatorKind::SemExtract => "SemExtract",
            OperatorKind::SemFilter => "SemFilter",
            OperatorKind::SemGroup => "SemGroup",
            OperatorKind::SemJoin => "SemJoin",
            OperatorKind::Script => "Script",
        }
    }

    pub fn from_name(name: &str) -> Option<OperatorKind> {
        OperatorKind::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn arity(self) -> Arity {
        match self {
            OperatorKind::FileScan | OperatorKind::DbScan => Arity::Exactly(0),
            OperatorKind::Join | OperatorKind::Merge | OperatorKind::SemJoin => Arity::Exactly(2),
            OperatorKind::Union => Arity::AtLeast(2),
            OperatorKind::Script => Arity::AtLeast(0),
            _ => Arity::Exactly(1),
        }
    }

    pub fn is_semantic(self) -> bool {
        matches!(
            self,
            OperatorKind::SemExtract | OperatorKind::SemFilter | OperatorKind::SemGroup | OperatorKind::SemJoin
        )
    }

    pub fn is_scan(self) -> bool {
        matches!(self, OperatorKind::FileScan | OperatorKind::DbScan)
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JoinMode {
    Inner,
    Left,
    Semi,
    Anti,
}

impl JoinMode {
    pub fn name(self) -> &'static str {
        match self {
            JoinMode::Inner => "inner",
            JoinMode::Left => "left",
            JoinMode::Semi => "semi",
            JoinMode::Anti => "anti",
        }
    }

    pub fn from_name(s: &str) -> Option<JoinMode> {
        Some(match s {
            "inner" => JoinMode::Inner,
            "left" => JoinMode::Left,
            "semi" => JoinMode::Semi,
            "anti" => JoinMode::Anti,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggFunc {
    Count,
    Sum,
    Avg,
    Min,
    Max,
}

impl AggFunc {
    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Count => "count",
            AggFunc::Sum => "sum",
            AggFunc::Avg => "avg",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
        }
    }

    pub fn from_name(s: &str) -> Option<AggFunc> {
        Some(match s.to_ascii_lowercase().as_str() {
            "count" => AggFunc::Count,
            "sum" => AggFunc::Sum,
            "avg" | "mean" => AggFunc::Avg,
            "min" => AggFunc::Min,
            "max" => AggFunc::Max,
            _ => return None,
        })
    }
}

/// One Aggregate output. `func == None` is a bare column reference, which is
/// only legal when the column is a group key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggItem {
    pub func: Option<AggFunc>,
    /// Input column; `*` is allowed for `count`.
    pub column: String,
    pub out_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SortDirection {
    Asc,
    Desc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectItem {
    pub name: String,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operator {
    FileScan {
        dataset: String,
        format: String,
    },
    DbScan {
        connector: String,
        sql_text: String,
        /// Declared result columns; when absent the connector describes the query.
        columns: Option<Schema>,
    },
    Filter {
        predicate: Expr,
    },
    Project {
        items: Vec<ProjectItem>,
    },
    Join {
        mode: JoinMode,
        condition: Expr,
    },
    Merge {
        mode: JoinMode,
        condition: Expr,
    },
    Aggregate {
        keys: Vec<String>,
        aggs: Vec<AggItem>,
    },
    Union,
    Sort {
        keys: Vec<String>,
        directions: Vec<SortDirection>,
    },
    Limit {
        k: u64,
    },
    SemExtract {
        /// `source_columns[i]` feeds `target_columns[i]`.
        source_columns: Vec<String>,
        target_columns: Vec<String>,
        instruction_prompt: String,
    },
    SemFilter {
        columns: Vec<String>,
        predicate_prompt: String,
    },
    SemGroup {
        columns: Vec<String>,
        label_prompt: String,
        max_labels: u32,
        label_column: String,
    },
    SemJoin {
        left_cols: Vec<String>,
        right_cols: Vec<String>,
        match_prompt: String,
    },
    Script {
        attrs: serde_json::Map<String, serde_json::Value>,
    },
}

impl Operator {
    pub fn kind(&self) -> OperatorKind {
        match self {
            Operator::FileScan { .. } => OperatorKind::FileScan,
            Operator::DbScan { .. } => OperatorKind::DbScan,
            Operator::Filter { .. } => OperatorKind::Filter,
            Operator::Project { .. } => OperatorKind::Project,
            Operator::Join { .. } => OperatorKind::Join,
            Operator::Merge { .. } => OperatorKind::Merge,
            Operator::Aggregate { .. } => OperatorKind::Aggregate,
            Operator::Union => OperatorKind::Union,
            Operator::Sort { .. } => OperatorKind::Sort,
            Operator::Limit { .. } => OperatorKind::Limit,
            Operator::SemExtract { .. } => OperatorKind::SemExtract,
            Operator::SemFilter { .. } => OperatorKind::SemFilter,
            Operator::SemGroup { .. } => OperatorKind::SemGroup,
            Operator::SemJoin { .. } => OperatorKind::SemJoin,
            Operator::Script { .. } => OperatorKind::Script,
        }
    }

    /// Input columns this operator reads.
    pub fn referenced_columns(&self) -> Vec<String> {
        match self {
            Operator::FileScan { .. } | Operator::DbScan { .. } | Operator::Union | Operator::Limit { .. } => vec![],
            Operator::Script { .. } => vec![],
            Operator::Filter { predicate } => predicate.columns(),
            Operator::Join { condition, .. } | Operator::Merge { condition, .. } => condition.columns(),
            Operator::Project { items } => {
                let mut out = Vec::new();
                for item in items {
                    for c in item.expr.columns() {
                        if !out.contains(&c) {
                            out.push(c);
                        }
                    }
                }
                out
            }
            Operator::Aggregate { keys, aggs } => {
                let mut out = keys.clone();
                for a in aggs {
                    if a.column != "*" && !out.contains(&a.column) {
                        out.push(a.column.clone());
                    }
                }
                out
            }
            Operator::Sort { keys, .. } => keys.clone(),
            Operator::SemExtract { source_columns, .. } => dedup(source_columns),
            Operator::SemFilter { columns, .. } | Operator::SemGroup { columns, .. } => dedup(columns),
            Operator::SemJoin { left_cols, right_cols, .. } => {
                let mut out = dedup(left_cols);
                out.extend(right_cols.iter().filter(|c| !left_cols.contains(c)).cloned());
                out
            }
        }
    }

    /// Columns this operator appends to its input (row-wise semantic operators).
    pub fn produced_columns(&self) -> Vec<String> {
        match self {
            Operator::SemExtract { target_columns, .. } => target_columns.clone(),
            Operator::SemGroup { label_column, .. } => vec![label_column.clone()],
            _ => vec![],
        }
    }

    /// True for unary operators whose output schema equals their input schema.
    pub fn preserves_schema(&self) -> bool {
        matches!(
            self,
            Operator::Filter { .. } | Operator::SemFilter { .. } | Operator::Sort { .. } | Operator::Limit { .. }
        )
    }
}

fn dedup(cols: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for c in cols {
        if !out.contains(c) {
            out.push(c.clone());
        }
    }
    out
}

/// One node of a logical plan. Plans are immutable values; rewrites build new trees.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanNode {
    pub id: NodeId,
    pub op: Operator,
    pub children: Vec<PlanNode>,
}

impl PlanNode {
    pub fn new(id: NodeId, op: Operator, children: Vec<PlanNode>) -> Self {
        PlanNode { id, op, children }
    }

    pub fn leaf(id: NodeId, op: Operator) -> Self {
        PlanNode { id, op, children: vec![] }
    }

    pub fn kind(&self) -> OperatorKind {
        self.op.kind()
    }

    /// Pre-order traversal.
    pub fn iter(&self) -> PlanIter<'_> {
        PlanIter { stack: vec![self] }
    }

    pub fn node_count(&self) -> usize {
        self.iter().count()
    }

    pub fn max_id(&self) -> NodeId {
        self.iter().map(|n| n.id).max().unwrap_or(0)
    }

    pub fn find(&self, id: NodeId) -> Option<&PlanNode> {
        self.iter().find(|n| n.id == id)
    }

    pub fn semantic_nodes(&self) -> Vec<&PlanNode> {
        let mut v: Vec<&PlanNode> = self.iter().filter(|n| n.kind().is_semantic()).collect();
        v.sort_by_key(|n| n.id);
        v
    }

    /// Compact one-line rendering, e.g. `Filter#2(SemExtract#1(FileScan#0))`.
    pub fn outline(&self) -> String {
        if self.children.is_empty() {
            return format!("{}#{}", self.kind(), self.id);
        }
        let inner: Vec<String> = self.children.iter().map(|c| c.outline()).collect();
        format!("{}#{}({})", self.kind(), self.id, inner.join(", "))
    }

    /// Indented multi-line rendering with operator attributes.
    pub fn pretty(&self) -> String {
        let mut out = String::new();
        self.pretty_into(0, &mut out);
        out
    }

    fn pretty_into(&self, depth: usize, out: &mut String) {
        out.push_str(&"  ".repeat(depth));
        out.push_str(&format!("{}#{} {}\n", self.kind(), self.id, crate::plan::json::attrs_summary(&self.op)));
        for c in &self.children {
            c.pretty_into(depth + 1, out);
        }
    }
}

pub struct PlanIter<'a> {
    stack: Vec<&'a PlanNode>,
}

impl<'a> Iterator for PlanIter<'a> {
    type Item = &'a PlanNode;

    fn next(&mut self) -> Option<&'a PlanNode> {
        let n = self.stack.pop()?;
        self.stack.extend(n.children.iter().rev());
        Some(n)
    }
}

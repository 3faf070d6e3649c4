//! Logical plan IR: operator tree, expressions, canonical JSON, schema
//! inference and grammar validation.

pub mod check;
pub mod expr;
pub mod json;
pub mod node;
pub mod schema;

pub use check::{infer_schema, validate_grammar, ErrorCategory, SchemaError, SchemaProvider, ValidationError};
pub use expr::{BinaryOp, Expr, Literal, UnaryOp};
pub use json::{parse_plan, serialize_plan, serialize_plan_pretty, PlanError};
pub use node::{AggFunc, AggItem, JoinMode, NodeId, Operator, OperatorKind, PlanNode, ProjectItem, SortDirection};
pub use schema::{Column, Schema, SemType};

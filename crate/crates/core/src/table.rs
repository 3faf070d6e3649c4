//! In-memory tables flowing between operators.

use std::cmp::Ordering;
use std::fmt;

use chrono::NaiveDate;
use serde_json::json;

use crate::plan::expr::{format_real, Literal};
use crate::plan::schema::{Schema, SemType};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Real(f64),
    Text(String),
    Date(NaiveDate),
}

impl Value {
    pub fn from_literal(l: &Literal) -> Value {
        match l {
            Literal::Null => Value::Null,
            Literal::Bool(b) => Value::Bool(*b),
            Literal::Int(i) => Value::Int(*i),
            Literal::Real(r) => Value::Real(*r),
            Literal::Text(s) => Value::Text(s.clone()),
            Literal::Date(d) => Value::Date(*d),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn sem_type(&self) -> Option<SemType> {
        Some(match self {
            Value::Null => return None,
            Value::Bool(_) => SemType::Boolean,
            Value::Int(_) => SemType::Integer,
            Value::Real(_) => SemType::Real,
            Value::Text(_) => SemType::Text,
            Value::Date(_) => SemType::Date,
        })
    }

    pub fn conforms_to(&self, ty: SemType) -> bool {
        match self.sem_type() {
            None => true,
            Some(t) => t == ty,
        }
    }

    /// Comparison used by predicates: `None` when either side is null or the
    /// types are incomparable. Integers and reals compare numerically.
    pub fn sql_cmp(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Null, _) | (_, Value::Null) => None,
            (Value::Int(a), Value::Int(b)) => Some(a.cmp(b)),
            (Value::Bool(a), Value::Bool(b)) => Some(a.cmp(b)),
            (Value::Text(a), Value::Text(b)) => Some(a.cmp(b)),
            (Value::Date(a), Value::Date(b)) => Some(a.cmp(b)),
            (a, b) => a.as_f64()?.partial_cmp(&b.as_f64()?),
        }
    }

    /// Total order used by Sort and for canonical row ordering: nulls first,
    /// then by type rank, then by value.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        fn rank(v: &Value) -> u8 {
            match v {
                Value::Null => 0,
                Value::Bool(_) => 1,
                Value::Int(_) | Value::Real(_) => 2,
                Value::Text(_) => 3,
                Value::Date(_) => 4,
            }
        }
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Int(_) | Value::Real(_), Value::Int(_) | Value::Real(_)) => {
                self.as_f64().unwrap().total_cmp(&other.as_f64().unwrap())
            }
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (Value::Date(a), Value::Date(b)) => a.cmp(b),
            _ => rank(self).cmp(&rank(other)),
        }
    }

    /// Plain text rendering used inside LLM prompts and text output.
    pub fn render(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Bool(b) => b.to_string(),
            Value::Int(i) => i.to_string(),
            Value::Real(r) => format_real(*r),
            Value::Text(s) => s.clone(),
            Value::Date(d) => d.format("%Y-%m-%d").to_string(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Null => serde_json::Value::Null,
            Value::Bool(b) => json!(b),
            Value::Int(i) => json!(i),
            Value::Real(r) => serde_json::Number::from_f64(*r).map(serde_json::Value::Number).unwrap_or_default(),
            Value::Text(s) => json!(s),
            Value::Date(d) => json!(d.format("%Y-%m-%d").to_string()),
        }
    }

    /// Converts a JSON scalar into a value of type `ty`, if it fits.
    pub fn from_json(v: &serde_json::Value, ty: SemType) -> Option<Value> {
        use serde_json::Value as J;
        Some(match (v, ty) {
            (J::Null, _) => Value::Null,
            (J::Bool(b), SemType::Boolean) => Value::Bool(*b),
            (J::Number(n), SemType::Integer) => Value::Int(n.as_i64()?),
            (J::Number(n), SemType::Real) => Value::Real(n.as_f64()?),
            (J::String(s), SemType::Date) => Value::Date(NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?),
            (J::String(s), SemType::Text) => Value::Text(s.clone()),
            (other, SemType::Text) => Value::Text(other.to_string()),
            _ => return None,
        })
    }

    /// Parses a raw text cell (CSV and similar) as `ty`. Empty cells are null.
    pub fn parse_as(raw: &str, ty: SemType) -> Option<Value> {
        let t = raw.trim();
        if t.is_empty() {
            return Some(Value::Null);
        }
        Some(match ty {
            SemType::Text => Value::Text(raw.to_string()),
            SemType::Integer => Value::Int(t.parse().ok()?),
            SemType::Real => Value::Real(t.parse().ok()?),
            SemType::Boolean => match t.to_ascii_lowercase().as_str() {
                "true" => Value::Bool(true),
                "false" => Value::Bool(false),
                _ => return None,
            },
            SemType::Date => Value::Date(NaiveDate::parse_from_str(t, "%Y-%m-%d").ok()?),
        })
    }
}

/// Narrowest type that every non-empty cell parses as.
pub fn infer_type<'a>(cells: impl Iterator<Item = &'a str> + Clone) -> SemType {
    let candidates = [SemType::Integer, SemType::Real, SemType::Boolean, SemType::Date];
    let mut any = false;
    for ty in candidates {
        let mut ok = true;
        for c in cells.clone() {
            if c.trim().is_empty() {
                continue;
            }
            any = true;
            if Value::parse_as(c, ty).is_none() {
                ok = false;
                break;
            }
        }
        if ok && any {
            return ty;
        }
    }
    SemType::Text
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: Schema,
    pub rows: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("row {row} does not conform to schema {schema}: {detail}")]
pub struct RowShapeError {
    pub row: usize,
    pub schema: String,
    pub detail: String,
}

impl Table {
    pub fn new(schema: Schema, rows: Vec<Vec<Value>>) -> Result<Table, RowShapeError> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(RowShapeError {
                    row: i,
                    schema: schema.to_string(),
                    detail: format!("{} values for {} columns", row.len(), schema.len()),
                });
            }
            for (v, c) in row.iter().zip(schema.columns()) {
                if !v.conforms_to(c.ty) {
                    return Err(RowShapeError {
                        row: i,
                        schema: schema.to_string(),
                        detail: format!("value {v:?} in column {} of type {}", c.name, c.ty),
                    });
                }
            }
        }
        Ok(Table { schema, rows })
    }

    pub fn empty(schema: Schema) -> Table {
        Table { schema, rows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_values(&self, name: &str) -> Option<impl Iterator<Item = &Value>> {
        let idx = self.schema.index_of(name)?;
        Some(self.rows.iter().map(move |r| &r[idx]))
    }

    /// Rows sorted by the total value order; used for multiset comparison.
    pub fn sorted_rows(&self) -> Vec<Vec<Value>> {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| cmp_rows(a, b));
        rows
    }

    /// Multiset equality of rows under identical schemas.
    pub fn same_multiset(&self, other: &Table) -> bool {
        self.schema == other.schema && rows_equal(&self.sorted_rows(), &other.sorted_rows())
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "columns": self.schema.columns().iter().map(|c| json!({"name": c.name, "type": c.ty.name()})).collect::<Vec<_>>(),
            "rows": self.rows.iter().map(|r| r.iter().map(Value::to_json).collect::<Vec<_>>()).collect::<Vec<_>>(),
        })
    }

    /// Inverse of [`Table::to_json`].
    pub fn from_json(doc: &serde_json::Value) -> Result<Table, String> {
        let cols = doc.get("columns").and_then(|c| c.as_array()).ok_or("missing columns array")?;
        let mut columns = Vec::with_capacity(cols.len());
        for c in cols {
            let name = c.get("name").and_then(|n| n.as_str()).ok_or("column without name")?;
            let ty =
                c.get("type").and_then(|t| t.as_str()).and_then(SemType::from_name).ok_or("column without type")?;
            columns.push(crate::plan::Column::new(name, ty));
        }
        let schema = Schema::new(columns).map_err(|e| e.to_string())?;
        let mut rows = Vec::new();
        for r in doc.get("rows").and_then(|r| r.as_array()).ok_or("missing rows array")? {
            let cells = r.as_array().ok_or("row is not an array")?;
            if cells.len() != schema.len() {
                return Err(format!("row has {} cells for {} columns", cells.len(), schema.len()));
            }
            let row = cells
                .iter()
                .zip(schema.columns())
                .map(|(v, c)| Value::from_json(v, c.ty).ok_or_else(|| format!("bad {} value {v}", c.ty)))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Table::new(schema, rows).map_err(|e| e.to_string())
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let headers: Vec<String> = self.schema.names().map(str::to_string).collect();
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(|v| if v.is_null() { "NULL".to_string() } else { v.render() }).collect())
            .collect();
        let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |vals: &[String]| {
            vals.iter()
                .zip(&widths)
                .map(|(v, w)| format!("{v:<w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
                .trim_end()
                .to_string()
        };
        let mut out = line(&headers);
        out.push('\n');
        out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
        out.push('\n');
        for row in &cells {
            out.push_str(&line(row));
            out.push('\n');
        }
        out.push_str(&format!("({} row{})\n", self.rows.len(), if self.rows.len() == 1 { "" } else { "s" }));
        out
    }
}

pub fn cmp_rows(a: &[Value], b: &[Value]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.total_cmp(y);
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

/// Row equality that treats reals within a relative 1e-9 as equal, so that
/// sums computed in different association orders still compare equal.
pub fn rows_equal(a: &[Vec<Value>], b: &[Vec<Value>]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(ra, rb)| {
            ra.len() == rb.len()
                && ra.iter().zip(rb).all(|(x, y)| match (x, y) {
                    (Value::Real(p), Value::Real(q)) => p == q || (p - q).abs() <= 1e-9 * p.abs().max(q.abs()).max(1.0),
                    _ => x == y,
                })
        })
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

use std::collections::HashMap;

use chrono::NaiveDate;

use crate::plan::expr::ExprType;
use crate::plan::{AggFunc, AggItem, BinaryOp, Column, Expr, JoinMode, ProjectItem, Schema, SemType, SortDirection};
use crate::table::{Table, Value};

/// Hashable form of a value; numerically equal integers and reals coincide.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) enum Key {
    Null,
    Bool(bool),
    Int(i64),
    Real(u64),
    Text(String),
    Date(NaiveDate),
}

pub(crate) fn key(v: &Value) -> Key {
    match v {
        Value::Null => Key::Null,
        Value::Bool(b) => Key::Bool(*b),
        Value::Int(i) => Key::Int(*i),
        Value::Real(r) => {
            if r.fract() == 0.0 && r.abs() < 9.0e18 {
                Key::Int(*r as i64)
            } else if r.is_nan() {
                Key::Real(f64::NAN.to_bits())
            } else {
                Key::Real(r.to_bits())
            }
        }
        Value::Text(s) => Key::Text(s.clone()),
        Value::Date(d) => Key::Date(*d),
    }
}

pub fn filter(input: Table, predicate: &Expr) -> Result<Table, String> {
    let mut rows = Vec::with_capacity(input.rows.len());
    for row in input.rows {
        if predicate.eval(&input.schema, &row).map_err(|e| e.to_string())? == Value::Bool(true) {
            rows.push(row);
        }
    }
    Ok(Table { schema: input.schema, rows })
}

pub fn project(input: &Table, items: &[ProjectItem]) -> Result<Table, String> {
    let mut columns = Vec::with_capacity(items.len());
    for item in items {
        let ty = match item.expr.check(&input.schema).map_err(|e| e.to_string())? {
            ExprType::Scalar(t) => t,
            ExprType::Null => SemType::Text,
            ExprType::List(_) => return Err(format!("list expression in projection {}", item.name)),
        };
        columns.push(Column::new(item.name.clone(), ty));
    }
    let schema = Schema::new(columns).map_err(|e| e.to_string())?;
    let mut rows = Vec::with_capacity(input.rows.len());
    for row in &input.rows {
        let mut out = Vec::with_capacity(items.len());
        for (item, col) in items.iter().zip(schema.columns()) {
            let v = item.expr.eval(&input.schema, row).map_err(|e| e.to_string())?;
            out.push(match (v, col.ty) {
                (Value::Int(i), SemType::Real) => Value::Real(i as f64),
                (v, _) => v,
            });
        }
        rows.push(out);
    }
    Ok(Table { schema, rows })
}

/// Left/right column pairs when `cond` is a conjunction of cross-side
/// column equalities.
fn equi_pairs(cond: &Expr, left: &Schema, right: &Schema) -> Option<Vec<(usize, usize)>> {
    let mut pairs = Vec::new();
    for c in cond.conjuncts() {
        let Expr::Binary { op: BinaryOp::Eq, left: a, right: b } = c else { return None };
        let (Expr::Column(a), Expr::Column(b)) = (a.as_ref(), b.as_ref()) else { return None };
        if let (Some(l), Some(r)) = (left.index_of(a), right.index_of(b)) {
            pairs.push((l, r));
        } else if let (Some(l), Some(r)) = (left.index_of(b), right.index_of(a)) {
            pairs.push((l, r));
        } else {
            return None;
        }
    }
    Some(pairs)
}

/// Join and Merge. Output is left-major: for each left row, its matches in
/// right-row order.
pub fn join(left: Table, right: Table, mode: JoinMode, condition: &Expr) -> Result<Table, String> {
    let combined = left.schema.concat(&right.schema).map_err(|e| e.to_string())?;
    let pairs = equi_pairs(condition, &left.schema, &right.schema);
    let mut buckets: HashMap<Vec<Key>, Vec<usize>> = HashMap::new();
    if let Some(pairs) = &pairs {
        for (j, r) in right.rows.iter().enumerate() {
            if pairs.iter().any(|(_, ri)| r[*ri].is_null()) {
                continue;
            }
            buckets.entry(pairs.iter().map(|(_, ri)| key(&r[*ri])).collect()).or_default().push(j);
        }
    }
    let all: Vec<usize> = (0..right.rows.len()).collect();
    let mut rows = Vec::new();
    let mut joined = Vec::with_capacity(combined.len());
    for l in &left.rows {
        let candidates: &[usize] = match &pairs {
            Some(pairs) => {
                if pairs.iter().any(|(li, _)| l[*li].is_null()) {
                    &[]
                } else {
                    buckets
                        .get(&pairs.iter().map(|(li, _)| key(&l[*li])).collect::<Vec<_>>())
                        .map_or(&[], Vec::as_slice)
                }
            }
            None => &all,
        };
        let mut matched = false;
        for &j in candidates {
            joined.clear();
            joined.extend(l.iter().cloned());
            joined.extend(right.rows[j].iter().cloned());
            if condition.eval(&combined, &joined).map_err(|e| e.to_string())? != Value::Bool(true) {
                continue;
            }
            matched = true;
            match mode {
                JoinMode::Inner | JoinMode::Left => rows.push(joined.clone()),
                JoinMode::Semi | JoinMode::Anti => break,
            }
        }
        match mode {
            JoinMode::Left if !matched => {
                let mut r = l.clone();
                r.extend(std::iter::repeat_n(Value::Null, right.schema.len()));
                rows.push(r);
            }
            JoinMode::Semi if matched => rows.push(l.clone()),
            JoinMode::Anti if !matched => rows.push(l.clone()),
            _ => {}
        }
    }
    let schema = match mode {
        JoinMode::Semi | JoinMode::Anti => left.schema,
        _ => combined,
    };
    Ok(Table { schema, rows })
}

fn agg_type(item: &AggItem, input: &Schema) -> Result<SemType, String> {
    let col_ty = if item.column == "*" {
        None
    } else {
        Some(input.column(&item.column).ok_or_else(|| format!("UnknownColumn('{}')", item.column))?.ty)
    };
    Ok(match (item.func, col_ty) {
        (Some(AggFunc::Count), _) => SemType::Integer,
        (Some(AggFunc::Avg), _) => SemType::Real,
        (_, Some(t)) => t,
        (_, None) => return Err(format!("'*' is only valid with count in {}", item.out_name)),
    })
}

fn fold(func: AggFunc, values: &[&Value]) -> Value {
    let present: Vec<&Value> = values.iter().copied().filter(|v| !v.is_null()).collect();
    match func {
        AggFunc::Count => Value::Int(present.len() as i64),
        AggFunc::Sum => {
            if present.is_empty() {
                return Value::Null;
            }
            if present.iter().all(|v| matches!(v, Value::Int(_))) {
                let mut acc: i64 = 0;
                for v in &present {
                    let Value::Int(i) = v else { unreachable!() };
                    match acc.checked_add(*i) {
                        Some(s) => acc = s,
                        None => return Value::Null,
                    }
                }
                Value::Int(acc)
            } else {
                Value::Real(present.iter().filter_map(|v| v.as_f64()).sum())
            }
        }
        AggFunc::Avg => {
            if present.is_empty() {
                return Value::Null;
            }
            let s: f64 = present.iter().filter_map(|v| v.as_f64()).sum();
            Value::Real(s / present.len() as f64)
        }
        AggFunc::Min | AggFunc::Max => {
            let mut best: Option<&Value> = None;
            for v in present {
                best = Some(match best {
                    None => v,
                    Some(b) => {
                        let ord = v.total_cmp(b);
                        let better = if func == AggFunc::Min { ord.is_lt() } else { ord.is_gt() };
                        if better {
                            v
                        } else {
                            b
                        }
                    }
                });
            }
            best.cloned().unwrap_or(Value::Null)
        }
    }
}

/// Groups in order of first appearance. Without keys the whole input is one
/// group; an empty input then yields one row unless an average is requested,
/// which is undefined over no rows.
pub fn aggregate(input: &Table, keys: &[String], aggs: &[AggItem]) -> Result<Table, String> {
    let key_idx: Vec<usize> = keys
        .iter()
        .map(|k| input.schema.index_of(k).ok_or_else(|| format!("UnknownColumn('{k}')")))
        .collect::<Result<_, _>>()?;
    let mut columns: Vec<Column> = key_idx.iter().map(|i| input.schema.columns()[*i].clone()).collect();
    for a in aggs {
        columns.push(Column::new(a.out_name.clone(), agg_type(a, &input.schema)?));
    }
    let schema = Schema::new(columns).map_err(|e| e.to_string())?;

    let mut order: Vec<Vec<Key>> = Vec::new();
    let mut groups: HashMap<Vec<Key>, Vec<usize>> = HashMap::new();
    for (r, row) in input.rows.iter().enumerate() {
        let k: Vec<Key> = key_idx.iter().map(|i| key(&row[*i])).collect();
        groups
            .entry(k.clone())
            .or_insert_with(|| {
                order.push(k);
                Vec::new()
            })
            .push(r);
    }
    if keys.is_empty() && order.is_empty() {
        if aggs.iter().any(|a| a.func == Some(AggFunc::Avg)) {
            return Ok(Table { schema, rows: Vec::new() });
        }
        order.push(Vec::new());
        groups.insert(Vec::new(), Vec::new());
    }
    let mut rows = Vec::with_capacity(order.len());
    for k in &order {
        let members = &groups[k];
        let mut out: Vec<Value> = key_idx.iter().map(|i| input.rows[members[0]][*i].clone()).collect();
        for a in aggs {
            let v = match (a.func, a.column.as_str()) {
                (Some(AggFunc::Count), "*") => Value::Int(members.len() as i64),
                (None, col) => {
                    let i = input.schema.index_of(col).ok_or_else(|| format!("UnknownColumn('{col}')"))?;
                    members.first().map(|m| input.rows[*m][i].clone()).unwrap_or(Value::Null)
                }
                (Some(f), col) => {
                    let i = input.schema.index_of(col).ok_or_else(|| format!("UnknownColumn('{col}')"))?;
                    let vals: Vec<&Value> = members.iter().map(|m| &input.rows[*m][i]).collect();
                    let v = fold(f, &vals);
                    match (v, schema.column(&a.out_name).map(|c| c.ty)) {
                        (Value::Int(x), Some(SemType::Real)) => Value::Real(x as f64),
                        (v, _) => v,
                    }
                }
            };
            out.push(v);
        }
        rows.push(out);
    }
    Ok(Table { schema, rows })
}

pub fn union(inputs: Vec<Table>) -> Result<Table, String> {
    let mut it = inputs.into_iter();
    let mut first = it.next().ok_or("Union without inputs")?;
    for t in it {
        if t.schema != first.schema {
            return Err(format!("Union input schema {} differs from {}", t.schema, first.schema));
        }
        first.rows.extend(t.rows);
    }
    Ok(first)
}

/// Stable multi-key sort; nulls sort first ascending and last descending.
pub fn sort(mut input: Table, keys: &[String], directions: &[SortDirection]) -> Result<Table, String> {
    let idx: Vec<(usize, SortDirection)> = keys
        .iter()
        .enumerate()
        .map(|(n, k)| {
            input
                .schema
                .index_of(k)
                .map(|i| (i, directions.get(n).copied().unwrap_or(SortDirection::Asc)))
                .ok_or_else(|| format!("UnknownColumn('{k}')"))
        })
        .collect::<Result<_, _>>()?;
    input.rows.sort_by(|a, b| {
        for (i, d) in &idx {
            let o = a[*i].total_cmp(&b[*i]);
            let o = if *d == SortDirection::Desc { o.reverse() } else { o };
            if o.is_ne() {
                return o;
            }
        }
        std::cmp::Ordering::Equal
    });
    Ok(input)
}

pub fn limit(mut input: Table, k: u64) -> Table {
    input.rows.truncate(usize::try_from(k).unwrap_or(usize::MAX));
    input
}

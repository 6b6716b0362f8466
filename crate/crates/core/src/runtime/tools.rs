//! Pure table operations behind the builtin tools.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde_json::Value;

use super::ToolError;
use crate::sql::{Aggregate, ConditionKind};
use crate::table::{Row, Table};
use crate::value::{format_real, json_as_number, json_as_text, parse_number};

fn column(table: &Table, key: &str) -> Result<usize, ToolError> {
    table.column_index(key).ok_or_else(|| ToolError::UnknownColumn(key.to_string()))
}

/// SQL LIKE with `%` and `_`, ASCII case-insensitive.
pub fn like_match(text: &str, pattern: &str) -> bool {
    let t: Vec<char> = text.chars().map(|c| c.to_ascii_lowercase()).collect();
    let p: Vec<char> = pattern.chars().map(|c| c.to_ascii_lowercase()).collect();
    // Iterative wildcard match with single-star backtracking.
    let (mut ti, mut pi) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '_' || (p[pi] != '%' && p[pi] == t[ti])) {
            ti += 1;
            pi += 1;
        } else if pi < p.len() && p[pi] == '%' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '%' {
        pi += 1;
    }
    pi == p.len()
}

fn compare_ordered(cond: ConditionKind, ord: Ordering) -> bool {
    match cond {
        ConditionKind::EqualTo => ord == Ordering::Equal,
        ConditionKind::NotEqualTo => ord != Ordering::Equal,
        ConditionKind::GreaterThan => ord == Ordering::Greater,
        ConditionKind::LessThan => ord == Ordering::Less,
        ConditionKind::GreaterThanEqualTo => ord != Ordering::Less,
        ConditionKind::LessThanEqualTo => ord != Ordering::Greater,
        ConditionKind::Contains | ConditionKind::Like => false,
    }
}

pub fn filter(
    table: &Table,
    key: &str,
    value: &Value,
    cond: ConditionKind,
) -> Result<Table, ToolError> {
    let col = column(table, key)?;
    let numeric_value = json_as_number(value);
    let numeric = table.is_numeric(col) && numeric_value.is_some();
    let text_value = json_as_text(value);
    let keep = |cell: &str| -> bool {
        match cond {
            ConditionKind::Like => like_match(cell, &text_value),
            ConditionKind::Contains => cell.contains(text_value.as_str()),
            _ if numeric => {
                let x = parse_number(cell).unwrap_or(f64::NAN);
                x.partial_cmp(&numeric_value.unwrap()).is_some_and(|o| compare_ordered(cond, o))
            }
            _ => compare_ordered(cond, cell.cmp(text_value.as_str())),
        }
    };
    let rows = table
        .rows
        .iter()
        .filter(|r| r[col].as_deref().is_some_and(keep))
        .cloned()
        .collect();
    Ok(Table { columns: table.columns.clone(), rows })
}

fn cell_order(a: &Option<String>, b: &Option<String>, numeric: bool, ascending: bool) -> Ordering {
    match (a, b) {
        (None, None) => Ordering::Equal,
        (None, Some(_)) => Ordering::Greater,
        (Some(_), None) => Ordering::Less,
        (Some(x), Some(y)) => {
            let o = if numeric {
                let (x, y) = (parse_number(x).unwrap_or(0.0), parse_number(y).unwrap_or(0.0));
                x.partial_cmp(&y).unwrap_or(Ordering::Equal)
            } else {
                x.cmp(y)
            };
            if ascending { o } else { o.reverse() }
        }
    }
}

/// Stable sort; NULLs last in both directions.
pub fn sort(table: &Table, key: &str, ascending: bool) -> Result<Table, ToolError> {
    let col = column(table, key)?;
    let numeric = table.is_numeric(col);
    let mut rows = table.rows.clone();
    rows.sort_by(|a, b| cell_order(&a[col], &b[col], numeric, ascending));
    Ok(Table { columns: table.columns.clone(), rows })
}

/// Aggregates the cells of one column (or counts rows when `cells` is `None`).
fn aggregate_cells<'a>(
    agg: Aggregate,
    cells: Option<impl Iterator<Item = Option<&'a str>>>,
    rows: usize,
    target: &str,
) -> Result<Option<String>, ToolError> {
    let Some(cells) = cells else {
        if agg == Aggregate::Count {
            return Ok(Some(rows.to_string()));
        }
        return Err(ToolError::MissingArgument(format!("key_name for {}", agg.name())));
    };
    let present: Vec<&str> = cells.flatten().collect();
    if agg == Aggregate::Count {
        return Ok(Some(present.len().to_string()));
    }
    let mut nums = Vec::with_capacity(present.len());
    for c in &present {
        match parse_number(c) {
            Some(v) => nums.push(v),
            None => return Err(ToolError::NonNumericAggregate(target.to_string())),
        }
    }
    if nums.is_empty() {
        return Ok(None);
    }
    let v = match agg {
        Aggregate::Sum => nums.iter().sum(),
        Aggregate::Avg => nums.iter().sum::<f64>() / nums.len() as f64,
        Aggregate::Min => nums.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregate::Max => nums.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregate::Count => unreachable!(),
    };
    Ok(Some(format_real(v)))
}

/// One row per distinct key in first-appearance order: `[key, aggregation]`.
pub fn group_by(
    table: &Table,
    key: &str,
    agg: Aggregate,
    target: Option<&str>,
) -> Result<Table, ToolError> {
    let col = column(table, key)?;
    let target_col = target.map(|t| column(table, t)).transpose()?;
    if let Some(t) = target_col {
        if agg != Aggregate::Count && !table.is_numeric(t) {
            return Err(ToolError::NonNumericAggregate(table.columns[t].clone()));
        }
    }
    let mut order: Vec<Option<String>> = Vec::new();
    let mut groups: HashMap<Option<String>, Vec<&Row>> = HashMap::new();
    for row in &table.rows {
        let k = row[col].clone();
        groups.entry(k.clone()).or_insert_with(|| {
            order.push(k);
            Vec::new()
        });
        groups.get_mut(&row[col]).unwrap().push(row);
    }
    let mut out = Table::new(vec![key.to_string(), agg.name().to_string()]);
    for k in order {
        let members = &groups[&k];
        let cells = target_col.map(|t| members.iter().map(move |r| r[t].as_deref()));
        let v = aggregate_cells(agg, cells, members.len(), target.unwrap_or(key))?;
        out.rows.push(vec![k, v]);
    }
    Ok(out)
}

/// Single-row, single-column table named after the operation.
pub fn aggregate(table: &Table, key: Option<&str>, agg: Aggregate) -> Result<Table, ToolError> {
    let col = key.map(|k| column(table, k)).transpose()?;
    if let Some(c) = col {
        if agg != Aggregate::Count && !table.is_numeric(c) {
            return Err(ToolError::NonNumericAggregate(table.columns[c].clone()));
        }
    }
    let cells = col.map(|c| table.rows.iter().map(move |r| r[c].as_deref()));
    let v = aggregate_cells(agg, cells, table.rows.len(), key.unwrap_or(""))?;
    let mut out = Table::new(vec![agg.name().to_string()]);
    out.rows.push(vec![v]);
    Ok(out)
}

pub fn distinct_values(values: &[Value]) -> Vec<Value> {
    let mut out: Vec<Value> = Vec::new();
    for v in values {
        if !out.contains(v) {
            out.push(v.clone());
        }
    }
    out
}

pub fn limit_values(values: &[Value], limit: i64) -> Result<Vec<Value>, ToolError> {
    match limit {
        -1 => Ok(values.to_vec()),
        n if n >= 1 => Ok(values.iter().take(n as usize).cloned().collect()),
        n => Err(ToolError::BadLimit(n)),
    }
}

pub fn retrieve(
    table: &Table,
    key: &str,
    distinct: bool,
    limit: i64,
) -> Result<Vec<Value>, ToolError> {
    let col = column(table, key)?;
    let values = table.column_json(col);
    let values = if distinct { distinct_values(&values) } else { values };
    limit_values(&values, limit)
}

/// Rewrites a column in place to the half-open character slice.
pub fn substring(table: &Table, key: &str, start: usize, end: usize) -> Result<Table, ToolError> {
    let col = column(table, key)?;
    if start > end {
        return Err(ToolError::BadRange { start, end });
    }
    let mut out = table.clone();
    for row in &mut out.rows {
        if let Some(cell) = &row[col] {
            let s: String = cell.chars().skip(start).take(end - start).collect();
            row[col] = if s.is_empty() { None } else { Some(s) };
        }
    }
    Ok(out)
}

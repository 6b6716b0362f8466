//! Answer comparison: flatten to leaves, canonicalize, compare as multisets.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::value::parse_number;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leaf {
    Null,
    Num(String),
    Text(String),
}

fn number_leaf(v: f64) -> Leaf {
    let v = if v == 0.0 { 0.0 } else { v };
    Leaf::Num(format!("{v:.8e}"))
}

fn push_leaves(value: &Value, out: &mut Vec<Leaf>) {
    match value {
        Value::Null => out.push(Leaf::Null),
        Value::Bool(b) => out.push(number_leaf(if *b { 1.0 } else { 0.0 })),
        Value::Number(n) => out.push(n.as_f64().map(number_leaf).unwrap_or(Leaf::Null)),
        Value::String(s) => {
            let t = s.trim();
            out.push(match parse_number(t) {
                Some(v) => number_leaf(v),
                None => Leaf::Text(t.to_string()),
            })
        }
        Value::Array(items) => items.iter().for_each(|v| push_leaves(v, out)),
        Value::Object(m) => m.values().for_each(|v| push_leaves(v, out)),
    }
}

/// Sorted multiset of canonical leaves. Numbers keep 9 significant digits.
pub fn normalize_answer(value: &Value) -> Vec<Leaf> {
    let mut out = Vec::new();
    push_leaves(value, &mut out);
    out.sort();
    out
}

pub fn answers_match(a: &Value, b: &Value) -> bool {
    normalize_answer(a) == normalize_answer(b)
}

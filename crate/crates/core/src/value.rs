//! Scalar cells shared by the SQL oracle, the CSV payloads, and the answer
//! normalizer.

use rusqlite::types::ValueRef;
use serde_json::{Number, Value};

/// Parses a strict decimal number: optional sign, digits, optional fraction,
/// optional exponent. `inf`, `NaN`, hex, and blank strings are rejected.
pub fn parse_number(text: &str) -> Option<f64> {
    let s = text.trim();
    let bytes = s.as_bytes();
    let mut i = 0;
    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
        i += 1;
    }
    let int_start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    let mut digits = i - int_start;
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        digits += i - frac_start;
    }
    if digits == 0 {
        return None;
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        i += 1;
        if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
            i += 1;
        }
        let exp_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return None;
        }
    }
    if i != bytes.len() {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Converts a number to JSON, keeping integers integral.
pub fn number_to_json(v: f64) -> Value {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        Value::Number(Number::from(v as i64))
    } else {
        Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
    }
}

/// One relational cell as read from the source database.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
}

impl Cell {
    pub fn from_sql(value: ValueRef<'_>) -> Cell {
        match value {
            ValueRef::Null => Cell::Null,
            ValueRef::Integer(i) => Cell::Int(i),
            ValueRef::Real(f) => Cell::Real(f),
            ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => Cell::Text(hex::encode(b)),
        }
    }

    /// CSV field text; `None` is written as an empty field.
    pub fn to_field(&self) -> Option<String> {
        match self {
            Cell::Null => None,
            Cell::Int(i) => Some(i.to_string()),
            Cell::Real(f) => Some(format_real(*f)),
            Cell::Text(s) => Some(s.clone()),
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Cell::Null => Value::Null,
            Cell::Int(i) => Value::Number((*i).into()),
            Cell::Real(f) => Number::from_f64(*f).map(Value::Number).unwrap_or(Value::Null),
            Cell::Text(s) => Value::String(s.clone()),
        }
    }

    /// Key used for equi-joins: numbers (and numeric text) compare by value.
    pub fn join_key(&self) -> Option<String> {
        match self {
            Cell::Null => None,
            Cell::Int(i) => Some(format!("n:{}", *i as f64)),
            Cell::Real(f) => Some(format!("n:{f}")),
            Cell::Text(s) => Some(match parse_number(s) {
                Some(v) => format!("n:{v}"),
                None => format!("s:{s}"),
            }),
        }
    }
}

/// Shortest round-trip rendering of a float.
pub fn format_real(v: f64) -> String {
    format!("{v}")
}

/// Converts a CSV field back into JSON given whether its column is numeric.
pub fn field_to_json(field: Option<&str>, numeric: bool) -> Value {
    match field {
        None => Value::Null,
        Some(text) if numeric => match text.trim().parse::<i64>() {
            Ok(i) => Value::Number(i.into()),
            Err(_) => parse_number(text).map(number_to_json).unwrap_or(Value::Null),
        },
        Some(text) => Value::String(text.to_string()),
    }
}

/// Renders a JSON scalar as comparison text.
pub fn json_as_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// Interprets a JSON scalar as a number (numbers, numeric strings, booleans).
pub fn json_as_number(value: &Value) -> Option<f64> {
    match value {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => parse_number(s),
        Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
        _ => None,
    }
}

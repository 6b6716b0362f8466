//! Executing synthesized GET endpoints: argument typing, the templated query,
//! and the `{resource: values}` response. Shared by the server and the
//! in-process runtime backend.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use rusqlite::types::Value as SqlValue;
use rusqlite::{Connection, ToSql};
use serde_json::{json, Map, Value};

use crate::db;
use crate::pool::{ParamSpec, RestEndpoint};
use crate::runtime::RestBackend;
use crate::value::{json_as_text, parse_number, Cell};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EndpointError {
    #[error("missing required parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{name}` must be of type {expected}")]
    BadType { name: String, expected: String },
    #[error("query execution failed")]
    Execution,
}

impl EndpointError {
    pub fn status(&self) -> u16 {
        match self {
            EndpointError::MissingParam(_) => 422,
            EndpointError::BadType { .. } => 400,
            EndpointError::Execution => 500,
        }
    }

    pub fn to_json(&self) -> Value {
        let kind = match self {
            EndpointError::MissingParam(_) => "MissingParam",
            EndpointError::BadType { .. } => "BadType",
            EndpointError::Execution => "ExecutionError",
        };
        json!({"error": kind, "detail": self.to_string()})
    }
}

/// Converts one argument to a SQL value according to its declared type.
/// Strings are parsed, since query-string arguments always arrive as text.
pub fn coerce(name: &str, spec: &ParamSpec, value: &Value) -> Result<SqlValue, EndpointError> {
    let bad = || EndpointError::BadType { name: name.to_string(), expected: spec.ty.clone() };
    match spec.ty.as_str() {
        "integer" => match value {
            Value::Number(n) => match (n.as_i64(), n.as_f64()) {
                (Some(i), _) => Ok(SqlValue::Integer(i)),
                (None, Some(f)) if f.fract() == 0.0 && f.abs() < 9.0e15 => Ok(SqlValue::Integer(f as i64)),
                _ => Err(bad()),
            },
            Value::String(s) => s.trim().parse::<i64>().map(SqlValue::Integer).map_err(|_| bad()),
            _ => Err(bad()),
        },
        "number" => match value {
            Value::Number(n) => n.as_f64().map(SqlValue::Real).ok_or_else(bad),
            Value::String(s) => parse_number(s).map(SqlValue::Real).ok_or_else(bad),
            _ => Err(bad()),
        },
        _ => match value {
            Value::String(s) => Ok(SqlValue::Text(s.clone())),
            Value::Number(_) => Ok(SqlValue::Text(json_as_text(value))),
            _ => Err(bad()),
        },
    }
}

/// Binds call arguments to the template placeholders. Extra arguments are ignored.
pub fn bind_args(endpoint: &RestEndpoint, args: &Map<String, Value>) -> Result<Vec<SqlValue>, EndpointError> {
    let mut typed: HashMap<&str, SqlValue> = HashMap::new();
    for (name, spec) in &endpoint.arguments {
        match args.get(name) {
            None | Some(Value::Null) => return Err(EndpointError::MissingParam(name.clone())),
            Some(v) => {
                typed.insert(name.as_str(), coerce(name, spec, v)?);
            }
        }
    }
    endpoint
        .placeholders
        .iter()
        .map(|p| typed.get(p.as_str()).cloned().ok_or_else(|| EndpointError::MissingParam(p.clone())))
        .collect()
}

/// Shapes result rows: one column gives a flat list, otherwise row arrays.
pub fn response(endpoint: &RestEndpoint, rows: &[Vec<Cell>]) -> Value {
    let values: Vec<Value> = rows
        .iter()
        .map(|r| match r.as_slice() {
            [only] => only.to_json(),
            cells => Value::Array(cells.iter().map(Cell::to_json).collect()),
        })
        .collect();
    let mut out = Map::new();
    out.insert(endpoint.resource.clone(), Value::Array(values));
    Value::Object(out)
}

pub fn execute(conn: &Connection, endpoint: &RestEndpoint, args: &Map<String, Value>) -> Result<Value, EndpointError> {
    let params = bind_args(endpoint, args)?;
    let refs: Vec<&dyn ToSql> = params.iter().map(|p| p as &dyn ToSql).collect();
    let rows = db::query_rows(conn, &endpoint.sql_template, &refs).map_err(|e| {
        tracing::warn!(endpoint = %endpoint.name, error = %e, "endpoint query failed");
        EndpointError::Execution
    })?;
    Ok(response(endpoint, &rows))
}

/// Runs endpoints directly against the local databases.
pub struct LocalRest {
    root: PathBuf,
    conns: Mutex<HashMap<String, Connection>>,
}

impl LocalRest {
    pub fn new(root: &Path) -> LocalRest {
        LocalRest { root: root.to_path_buf(), conns: Mutex::new(HashMap::new()) }
    }
}

impl RestBackend for LocalRest {
    fn call(&self, endpoint: &RestEndpoint, args: &Map<String, Value>) -> Result<Value, String> {
        let mut conns = self.conns.lock().unwrap_or_else(|e| e.into_inner());
        if !conns.contains_key(&endpoint.db) {
            let conn = db::open_read_only(&db::database_path(&self.root, &endpoint.db)).map_err(|e| e.to_string())?;
            conns.insert(endpoint.db.clone(), conn);
        }
        execute(&conns[&endpoint.db], endpoint, args).map_err(|e| format!("{}: {}", e.status(), e))
    }
}

/// Calls endpoints on a running server.
pub struct HttpRest {
    base_url: String,
    client: reqwest::blocking::Client,
}

impl HttpRest {
    pub fn new(base_url: &str, timeout: Duration) -> Result<HttpRest, String> {
        let client = reqwest::blocking::Client::builder().timeout(timeout).build().map_err(|e| e.to_string())?;
        Ok(HttpRest { base_url: base_url.trim_end_matches('/').to_string(), client })
    }
}

impl RestBackend for HttpRest {
    fn call(&self, endpoint: &RestEndpoint, args: &Map<String, Value>) -> Result<Value, String> {
        let query: Vec<(String, String)> = args.iter().map(|(k, v)| (k.clone(), json_as_text(v))).collect();
        let resp = self
            .client
            .get(format!("{}{}", self.base_url, endpoint.path))
            .query(&query)
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        let body: Value = resp.json().map_err(|e| e.to_string())?;
        if status.is_success() {
            Ok(body)
        } else {
            Err(format!("{}: {}", status.as_u16(), body))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use indexmap::IndexMap;

    fn endpoint() -> RestEndpoint {
        let mut arguments = IndexMap::new();
        arguments.insert("county".to_string(), ParamSpec::new("string", "county"));
        arguments.insert("n".to_string(), ParamSpec::new("integer", "n"));
        RestEndpoint {
            name: "get_x".into(),
            description: String::new(),
            path: "/v1/bird/t/x".into(),
            db: "t".into(),
            resource: "x".into(),
            arguments,
            sql_template: "SELECT b FROM t WHERE a = ? AND c > ?".into(),
            placeholders: vec!["county".into(), "n".into()],
        }
    }

    fn conn() -> Connection {
        let c = Connection::open_in_memory().unwrap();
        c.execute_batch("CREATE TABLE t (a TEXT, b REAL, c INTEGER); INSERT INTO t VALUES ('A', 1.0, 5), ('A', 2.5, 1), ('B', 3.0, 9);")
            .unwrap();
        c
    }

    #[test]
    fn executes_with_typed_args() {
        let args = json!({"county": "A", "n": "2", "extra": 1});
        let out = execute(&conn(), &endpoint(), args.as_object().unwrap()).unwrap();
        assert_eq!(out, json!({"x": [1.0]}));
    }

    #[test]
    fn error_statuses() {
        let e = endpoint();
        let missing = execute(&conn(), &e, json!({"county": "A"}).as_object().unwrap()).unwrap_err();
        assert_eq!(missing.status(), 422);
        let bad = execute(&conn(), &e, json!({"county": "A", "n": "two"}).as_object().unwrap()).unwrap_err();
        assert_eq!(bad.status(), 400);
        let mut broken = e.clone();
        broken.sql_template = "SELECT nope FROM t WHERE a = ? AND c > ?".into();
        let failed = execute(&conn(), &broken, json!({"county": "A", "n": 1}).as_object().unwrap()).unwrap_err();
        assert_eq!(failed.status(), 500);
        assert!(!failed.to_json().to_string().contains("nope"));
    }
}

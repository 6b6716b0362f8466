//! Executes tool calls over CSV payloads with `$LABEL$` chaining.

pub mod tools;

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::db;
use crate::pool::{Binding, Builtin, PoolEntry, RestEndpoint, Target, ToolPool};
use crate::sql::{Aggregate, ConditionKind};
use crate::table::{Table, TableHandle};
use crate::value::{json_as_number, parse_number, Cell};

pub const STARTING_TABLE: &str = "starting_table_var";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl ToolCall {
    pub fn new(name: &str, arguments: Value, label: Option<&str>) -> ToolCall {
        ToolCall {
            name: name.to_string(),
            arguments: arguments.as_object().cloned().unwrap_or_default(),
            label: label.map(str::to_string),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum ToolResult {
    Table(TableHandle),
    Values(Value),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ToolError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("unknown condition `{0}`")]
    UnknownCondition(String),
    #[error("unknown operation `{0}`")]
    UnknownOperation(String),
    #[error("bad range [{start}, {end})")]
    BadRange { start: usize, end: usize },
    #[error("bad limit {0}; expected -1 or a positive integer")]
    BadLimit(i64),
    #[error("non-numeric aggregate over `{0}`")]
    NonNumericAggregate(String),
    #[error("missing argument `{0}`")]
    MissingArgument(String),
    #[error("unexpected argument `{0}`")]
    UnexpectedArgument(String),
    #[error("bad argument `{name}`: {reason}")]
    BadArgument { name: String, reason: String },
    #[error("unresolved reference `{0}`")]
    UnresolvedReference(String),
    #[error("`{0}` holds values, not a table")]
    NotATable(String),
    #[error("`{0}` holds a table, not a list of values")]
    NotValues(String),
    #[error("tool `{0}` is not in the pool")]
    ToolNotInPool(String),
    #[error("label `{0}` is already bound")]
    DuplicateLabel(String),
    #[error("missing table `{0}`")]
    MissingTable(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("sequence produced no result")]
    NoFinalResult,
    #[error("endpoint error: {0}")]
    Endpoint(String),
    #[error("storage error: {0}")]
    Storage(String),
}

impl ToolError {
    pub fn kind(&self) -> &'static str {
        match self {
            ToolError::UnknownColumn(_) => "UnknownColumn",
            ToolError::UnknownCondition(_) => "UnknownCondition",
            ToolError::UnknownOperation(_) => "UnknownOperation",
            ToolError::BadRange { .. } => "BadRange",
            ToolError::BadLimit(_) => "BadLimit",
            ToolError::NonNumericAggregate(_) => "NonNumericAggregate",
            ToolError::MissingArgument(_) => "MissingArgument",
            ToolError::UnexpectedArgument(_) => "UnexpectedArgument",
            ToolError::BadArgument { .. } => "BadArgument",
            ToolError::UnresolvedReference(_) => "UnresolvedReference",
            ToolError::NotATable(_) => "NotATable",
            ToolError::NotValues(_) => "NotValues",
            ToolError::ToolNotInPool(_) => "ToolNotInPool",
            ToolError::DuplicateLabel(_) => "DuplicateLabel",
            ToolError::MissingTable(_) => "MissingTable",
            ToolError::MissingColumn(_) => "MissingColumn",
            ToolError::NoFinalResult => "NoFinalResult",
            ToolError::Endpoint(_) => "EndpointError",
            ToolError::Storage(_) => "StorageError",
        }
    }
}

/// Executes REST endpoints on behalf of the runtime.
pub trait RestBackend: Send + Sync {
    fn call(&self, endpoint: &RestEndpoint, args: &Map<String, Value>) -> Result<Value, String>;
}

/// Label bindings plus a private working directory for payload files.
pub struct LabelEnv {
    workdir: tempfile::TempDir,
    db_root: PathBuf,
    bindings: IndexMap<String, ToolResult>,
    tables: HashMap<PathBuf, Arc<Table>>,
    counter: usize,
    rest: Option<Arc<dyn RestBackend>>,
}

impl std::fmt::Debug for LabelEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LabelEnv")
            .field("workdir", &self.workdir.path())
            .field("labels", &self.bindings.keys().collect::<Vec<_>>())
            .finish()
    }
}

/// Strips `$...$` from a reference string.
pub fn reference_name(text: &str) -> &str {
    text.strip_prefix('$').and_then(|s| s.strip_suffix('$')).unwrap_or(text)
}

impl LabelEnv {
    pub fn new(db_root: &Path) -> Result<LabelEnv, ToolError> {
        let workdir = tempfile::Builder::new()
            .prefix("apibench-")
            .tempdir()
            .map_err(|e| ToolError::Storage(e.to_string()))?;
        Ok(LabelEnv {
            workdir,
            db_root: db_root.to_path_buf(),
            bindings: IndexMap::new(),
            tables: HashMap::new(),
            counter: 0,
            rest: None,
        })
    }

    pub fn with_rest(mut self, backend: Arc<dyn RestBackend>) -> LabelEnv {
        self.rest = Some(backend);
        self
    }

    pub fn workdir(&self) -> &Path {
        self.workdir.path()
    }

    pub fn get(&self, label: &str) -> Option<&ToolResult> {
        self.bindings.get(label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &String> {
        self.bindings.keys()
    }

    pub fn bind(&mut self, label: &str, result: ToolResult) -> Result<(), ToolError> {
        if self.bindings.contains_key(label) {
            return Err(ToolError::DuplicateLabel(label.to_string()));
        }
        self.bindings.insert(label.to_string(), result);
        Ok(())
    }

    fn store(&mut self, table: Table) -> Result<TableHandle, ToolError> {
        let path = self.workdir.path().join(format!("data_{}.csv", self.counter));
        self.counter += 1;
        let handle = table.write_csv(&path).map_err(|e| ToolError::Storage(e.to_string()))?;
        self.tables.insert(path, Arc::new(table));
        Ok(handle)
    }

    pub fn load_table(&mut self, handle: &TableHandle) -> Result<Arc<Table>, ToolError> {
        if let Some(t) = self.tables.get(&handle.path) {
            return Ok(t.clone());
        }
        let t = Arc::new(handle.load().map_err(|e| ToolError::Storage(e.to_string()))?);
        self.tables.insert(handle.path.clone(), t.clone());
        Ok(t)
    }

    /// Resolves a `data_source` argument: `$LABEL$` or a bare bound label.
    pub fn resolve(&self, reference: &Value) -> Result<(String, ToolResult), ToolError> {
        let text = match reference {
            Value::String(s) => s.as_str(),
            other => return Err(ToolError::UnresolvedReference(other.to_string())),
        };
        let name = reference_name(text.trim());
        self.bindings
            .get(name)
            .map(|r| (name.to_string(), r.clone()))
            .ok_or_else(|| ToolError::UnresolvedReference(text.to_string()))
    }

    fn table_arg(&mut self, args: &Map<String, Value>) -> Result<Arc<Table>, ToolError> {
        let source = args.get("data_source").ok_or(ToolError::MissingArgument("data_source".into()))?;
        match self.resolve(source)? {
            (_, ToolResult::Table(h)) => self.load_table(&h),
            (name, ToolResult::Values(_)) => Err(ToolError::NotATable(name)),
        }
    }

    fn values_arg(&mut self, args: &Map<String, Value>) -> Result<Vec<Value>, ToolError> {
        let source = args.get("data_source").ok_or(ToolError::MissingArgument("data_source".into()))?;
        match self.resolve(source)? {
            (_, ToolResult::Values(Value::Array(v))) => Ok(v),
            (name, _) => Err(ToolError::NotValues(name)),
        }
    }

    /// JSON form of a bound result: tables become rows of typed cells.
    pub fn result_json(&mut self, result: &ToolResult) -> Result<Value, ToolError> {
        match result {
            ToolResult::Values(v) => Ok(v.clone()),
            ToolResult::Table(h) => Ok(self.load_table(h)?.to_json_rows()),
        }
    }

    /// Runs the join initializer and binds `starting_table_var`.
    pub fn initialize(&mut self, call: &ToolCall) -> Result<TableHandle, ToolError> {
        let table = initialize_active_data(&call.arguments, &self.db_root)?;
        let handle = self.store(table)?;
        let label = call.label.clone().unwrap_or_else(|| STARTING_TABLE.to_string());
        self.bind(&label, ToolResult::Table(handle.clone()))?;
        Ok(handle)
    }

    /// Like `invoke`, but first rejects argument names the spec does not declare.
    pub fn invoke_entry(&mut self, entry: &PoolEntry, arguments: &Map<String, Value>) -> Result<ToolResult, ToolError> {
        if let Some(k) = arguments.keys().find(|k| !entry.spec.parameters.contains_key(*k)) {
            return Err(ToolError::UnexpectedArgument(k.clone()));
        }
        self.invoke(&entry.binding, arguments)
    }

    /// Executes one call against a binding without binding its result.
    pub fn invoke(&mut self, binding: &Binding, arguments: &Map<String, Value>) -> Result<ToolResult, ToolError> {
        let args = binding.canonical_args(arguments);
        match &binding.target {
            Target::Builtin { op } => self.invoke_builtin(*op, &args),
            Target::Rest { endpoint } => {
                let backend = self
                    .rest
                    .clone()
                    .ok_or_else(|| ToolError::Endpoint("no REST backend configured".into()))?;
                let response = backend.call(endpoint, &args).map_err(ToolError::Endpoint)?;
                let values = match response {
                    Value::Object(mut m) if m.contains_key(&endpoint.resource) => m.remove(&endpoint.resource).unwrap(),
                    other => other,
                };
                Ok(ToolResult::Values(values))
            }
        }
    }

    fn invoke_builtin(&mut self, op: Builtin, args: &Map<String, Value>) -> Result<ToolResult, ToolError> {
        let table_out = |env: &mut LabelEnv, t: Table| env.store(t).map(ToolResult::Table);
        let values_out = |v: Vec<Value>| Ok(ToolResult::Values(Value::Array(v)));
        match op {
            Builtin::FilterData => {
                let t = self.table_arg(args)?;
                let key = str_arg(args, "key_name")?;
                let value = args.get("value").ok_or(ToolError::MissingArgument("value".into()))?;
                let cond = str_arg(args, "condition")?;
                let cond = ConditionKind::parse(&cond).ok_or(ToolError::UnknownCondition(cond))?;
                let out = tools::filter(&t, &key, value, cond)?;
                table_out(self, out)
            }
            Builtin::SortData => {
                let t = self.table_arg(args)?;
                let key = str_arg(args, "key_name")?;
                let asc = bool_arg(args, "ascending")?.ok_or(ToolError::MissingArgument("ascending".into()))?;
                let out = tools::sort(&t, &key, asc)?;
                table_out(self, out)
            }
            Builtin::GroupDataBy => {
                let t = self.table_arg(args)?;
                let key = str_arg(args, "key_name")?;
                let agg = aggregate_arg(args, "aggregation")?;
                let target = opt_str_arg(args, "target_key")?;
                let out = tools::group_by(&t, &key, agg, target.as_deref())?;
                table_out(self, out)
            }
            Builtin::AggregateData => {
                let t = self.table_arg(args)?;
                let key = opt_str_arg(args, "key_name")?;
                let agg = aggregate_arg(args, "operation")?;
                let out = tools::aggregate(&t, key.as_deref(), agg)?;
                table_out(self, out)
            }
            Builtin::RetrieveData => {
                let t = self.table_arg(args)?;
                let key = str_arg(args, "key_name")?;
                let distinct = bool_arg(args, "distinct")?.unwrap_or(false);
                let limit = int_arg(args, "limit")?.unwrap_or(-1);
                values_out(tools::retrieve(&t, &key, distinct, limit)?)
            }
            Builtin::SelectUniqueValues => {
                let t = self.table_arg(args)?;
                let key = str_arg(args, "key_name")?;
                values_out(tools::retrieve(&t, &key, true, -1)?)
            }
            Builtin::TransformData => {
                let t = self.table_arg(args)?;
                let key = str_arg(args, "key_name")?;
                let op = str_arg(args, "operation_type")?;
                if op != "substring" {
                    return Err(ToolError::UnknownOperation(op));
                }
                let op_args = match args.get("operation_args") {
                    Some(Value::Object(m)) => m.clone(),
                    Some(Value::String(s)) => serde_json::from_str::<Map<String, Value>>(s)
                        .map_err(|e| bad("operation_args", e.to_string()))?,
                    Some(_) => return Err(bad("operation_args", "expected an object".into())),
                    None => return Err(ToolError::MissingArgument("operation_args".into())),
                };
                let start = int_arg(&op_args, "start_index")?
                    .ok_or(ToolError::MissingArgument("start_index".into()))?;
                let end = int_arg(&op_args, "end_index")?
                    .ok_or(ToolError::MissingArgument("end_index".into()))?;
                if start < 0 || end < 0 {
                    return Err(ToolError::BadRange { start: start.max(0) as usize, end: end.max(0) as usize });
                }
                let out = tools::substring(&t, &key, start as usize, end as usize)?;
                table_out(self, out)
            }
            Builtin::DistinctValues => {
                let v = self.values_arg(args)?;
                values_out(tools::distinct_values(&v))
            }
            Builtin::LimitValues => {
                let v = self.values_arg(args)?;
                let limit = int_arg(args, "limit")?.ok_or(ToolError::MissingArgument("limit".into()))?;
                values_out(tools::limit_values(&v, limit)?)
            }
        }
    }
}

fn bad(name: &str, reason: String) -> ToolError {
    ToolError::BadArgument { name: name.to_string(), reason }
}

fn str_arg(args: &Map<String, Value>, name: &str) -> Result<String, ToolError> {
    opt_str_arg(args, name)?.ok_or_else(|| ToolError::MissingArgument(name.to_string()))
}

fn opt_str_arg(args: &Map<String, Value>, name: &str) -> Result<Option<String>, ToolError> {
    match args.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(other) => Err(bad(name, format!("expected a string, got {other}"))),
    }
}

fn bool_arg(args: &Map<String, Value>, name: &str) -> Result<Option<bool>, ToolError> {
    match args.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Bool(b)) => Ok(Some(*b)),
        Some(Value::String(s)) if s.eq_ignore_ascii_case("true") => Ok(Some(true)),
        Some(Value::String(s)) if s.eq_ignore_ascii_case("false") => Ok(Some(false)),
        Some(other) => Err(bad(name, format!("expected a boolean, got {other}"))),
    }
}

fn int_arg(args: &Map<String, Value>, name: &str) -> Result<Option<i64>, ToolError> {
    match args.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => match json_as_number(v) {
            Some(x) if x.fract() == 0.0 && !v.is_boolean() => Ok(Some(x as i64)),
            _ => Err(bad(name, format!("expected an integer, got {v}"))),
        },
    }
}

fn aggregate_arg(args: &Map<String, Value>, name: &str) -> Result<Aggregate, ToolError> {
    let text = str_arg(args, name)?;
    Aggregate::parse(&text).ok_or(ToolError::UnknownOperation(text))
}

fn split_ref(text: &str) -> Result<(&str, &str), ToolError> {
    text.split_once('.').ok_or_else(|| bad("condition_sequence", format!("`{text}` is not alias.column")))
}

fn load_source_table(
    conn: &rusqlite::Connection,
    table: &str,
    prefix: &str,
) -> Result<Table, ToolError> {
    let cols = db::table_columns(conn, table).map_err(|_| ToolError::MissingTable(table.to_string()))?;
    let sql = format!("SELECT * FROM {}", db::quote_ident(table));
    let rows = db::query_rows(conn, &sql, &[]).map_err(|e| ToolError::Storage(e.to_string()))?;
    Ok(Table {
        columns: cols.iter().map(|(c, _)| db::prefixed(prefix, c)).collect(),
        rows: rows.into_iter().map(|r| r.iter().map(Cell::to_field).collect()).collect(),
    })
}

fn join_key(cell: &Option<String>) -> Option<String> {
    cell.as_ref().and_then(|s| Cell::Text(s.clone()).join_key())
}

/// Builds the joined starting table from an `initialization_step`.
pub fn initialize_active_data(args: &Map<String, Value>, db_root: &Path) -> Result<Table, ToolError> {
    let path = str_arg(args, "database_path")?;
    let path = if Path::new(&path).is_absolute() { PathBuf::from(&path) } else { db_root.join(&path) };
    let conn = db::open_read_only(&path).map_err(|e| ToolError::MissingTable(e.to_string()))?;

    let aliases = match args.get("alias_to_table_dict") {
        Some(Value::Object(m)) if !m.is_empty() => m,
        _ => return Err(ToolError::MissingArgument("alias_to_table_dict".into())),
    };
    // alias -> (source table, column prefix)
    let mut alias_tables: IndexMap<String, (String, String)> = IndexMap::new();
    for (alias, entry) in aliases {
        let original = entry
            .get("original_table_name")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("alias_to_table_dict", format!("`{alias}` lacks original_table_name")))?;
        let modified = entry.get("modified_table_name").and_then(Value::as_str).unwrap_or(original);
        alias_tables.insert(alias.clone(), (original.to_string(), modified.to_string()));
    }
    let find_alias = |a: &str| -> Result<String, ToolError> {
        alias_tables
            .keys()
            .find(|k| k.as_str() == a)
            .or_else(|| alias_tables.keys().find(|k| k.eq_ignore_ascii_case(a)))
            .cloned()
            .ok_or_else(|| bad("condition_sequence", format!("unknown alias `{a}`")))
    };

    let (first_alias, (first_table, first_prefix)) = alias_tables.first().map(|(a, t)| (a.clone(), t.clone())).unwrap();
    let mut working = load_source_table(&conn, &first_table, &first_prefix)?;
    let mut joined: HashSet<String> = HashSet::from([first_alias]);

    let conditions = match args.get("condition_sequence") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(v)) => v.clone(),
        Some(_) => return Err(bad("condition_sequence", "expected a list".into())),
    };
    for cond in &conditions {
        let parts: Vec<&str> = cond.as_array().map(|a| a.iter().filter_map(Value::as_str).collect()).unwrap_or_default();
        let [left, right, kind] = parts.as_slice() else {
            return Err(bad("condition_sequence", format!("malformed entry {cond}")));
        };
        if !kind.eq_ignore_ascii_case("INNER") {
            return Err(bad("condition_sequence", format!("unsupported join kind `{kind}`")));
        }
        let (la, lc) = split_ref(left)?;
        let (ra, rc) = split_ref(right)?;
        let (la, ra) = (find_alias(la)?, find_alias(ra)?);
        let column_name = |alias: &str, col: &str| -> Result<String, ToolError> {
            let prefix = &alias_tables[alias].1;
            let name = db::prefixed(prefix, col);
            Ok(name)
        };
        let (old_alias, old_col, new_alias, new_col) = match (joined.contains(&la), joined.contains(&ra)) {
            (true, false) => (la, lc, ra, rc),
            (false, true) => (ra, rc, la, lc),
            (true, true) => {
                // Both sides present: the condition filters the working table.
                let a = column_name(&la, lc)?;
                let b = column_name(&ra, rc)?;
                let (ia, ib) = (
                    working.column_index(&a).ok_or(ToolError::MissingColumn(a.clone()))?,
                    working.column_index(&b).ok_or(ToolError::MissingColumn(b.clone()))?,
                );
                working.rows.retain(|r| join_key(&r[ia]).is_some() && join_key(&r[ia]) == join_key(&r[ib]));
                continue;
            }
            (false, false) => {
                return Err(bad("condition_sequence", format!("`{left}` joins no initialized table")))
            }
        };
        let (new_table, new_prefix) = alias_tables[&new_alias].clone();
        let right_table = load_source_table(&conn, &new_table, &new_prefix)?;
        let old_name = column_name(&old_alias, old_col)?;
        let new_name = column_name(&new_alias, new_col)?;
        let li = working.column_index(&old_name).ok_or(ToolError::MissingColumn(old_name.clone()))?;
        let ri = right_table.column_index(&new_name).ok_or(ToolError::MissingColumn(new_name.clone()))?;
        let mut index: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, row) in right_table.rows.iter().enumerate() {
            if let Some(k) = join_key(&row[ri]) {
                index.entry(k).or_default().push(i);
            }
        }
        let mut columns = working.columns.clone();
        columns.extend(right_table.columns.iter().cloned());
        let mut rows = Vec::new();
        for row in &working.rows {
            let Some(k) = join_key(&row[li]) else { continue };
            for &i in index.get(&k).map(Vec::as_slice).unwrap_or(&[]) {
                let mut joined_row = row.clone();
                joined_row.extend(right_table.rows[i].iter().cloned());
                rows.push(joined_row);
            }
        }
        working = Table { columns, rows };
        joined.insert(new_alias);
    }
    if joined.len() != alias_tables.len() {
        return Err(bad("condition_sequence", "every aliased table must be joined".into()));
    }
    Ok(working)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub index: usize,
    pub name: String,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecFailure {
    pub step: usize,
    pub error: ToolError,
}

impl std::fmt::Display for ExecFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "step {}: {}", self.step, self.error)
    }
}

#[derive(Debug, Clone)]
pub struct SequenceOutcome {
    pub steps: Vec<StepTrace>,
    pub result: Result<Value, ExecFailure>,
}

/// Label a call binds: its own, or `OUTPUT_i`.
pub fn effective_label(call: &ToolCall, index: usize) -> String {
    call.label.clone().filter(|l| !l.trim().is_empty()).unwrap_or_else(|| format!("OUTPUT_{index}"))
}

/// Labels referenced through `data_source` by any of the calls.
pub fn referenced_labels<'a>(args: impl Iterator<Item = &'a Map<String, Value>>) -> HashSet<String> {
    args.filter_map(|a| a.get("data_source"))
        .filter_map(Value::as_str)
        .map(|s| reference_name(s.trim()).to_string())
        .collect()
}

/// The answer of an executed sequence: the union of its terminal results.
pub fn terminal_answer(env: &mut LabelEnv, executed: &[(String, Map<String, Value>)]) -> Result<Value, ToolError> {
    let used = referenced_labels(executed.iter().map(|(_, a)| a));
    let mut outputs = Vec::new();
    for (label, _) in executed {
        if used.contains(label) {
            continue;
        }
        let result = env.get(label).cloned().ok_or(ToolError::NoFinalResult)?;
        outputs.push(env.result_json(&result)?);
    }
    match outputs.len() {
        0 => Err(ToolError::NoFinalResult),
        1 => Ok(outputs.pop().unwrap()),
        _ => Ok(Value::Array(outputs)),
    }
}

/// Runs calls in order, binding each result; stops at the first error.
pub fn execute_sequence(calls: &[ToolCall], env: &mut LabelEnv, pool: &ToolPool) -> SequenceOutcome {
    let mut steps = Vec::new();
    let mut executed = Vec::new();
    if calls.is_empty() {
        return SequenceOutcome { steps, result: Err(ExecFailure { step: 0, error: ToolError::NoFinalResult }) };
    }
    for (i, call) in calls.iter().enumerate() {
        let label = effective_label(call, i);
        let outcome = (|| {
            if env.get(&label).is_some() {
                return Err(ToolError::DuplicateLabel(label.clone()));
            }
            let entry = pool.get(&call.name).ok_or_else(|| ToolError::ToolNotInPool(call.name.clone()))?;
            let result = env.invoke_entry(entry, &call.arguments)?;
            env.bind(&label, result)?;
            Ok(entry.binding.canonical_args(&call.arguments))
        })();
        match outcome {
            Ok(args) => {
                steps.push(StepTrace { index: i, name: call.name.clone(), label: label.clone(), error: None });
                executed.push((label, args));
            }
            Err(error) => {
                steps.push(StepTrace {
                    index: i,
                    name: call.name.clone(),
                    label,
                    error: Some(error.to_string()),
                });
                return SequenceOutcome { steps, result: Err(ExecFailure { step: i, error }) };
            }
        }
    }
    let result = terminal_answer(env, &executed).map_err(|error| ExecFailure { step: calls.len(), error });
    SequenceOutcome { steps, result }
}

/// Parses a numeric-looking JSON string argument; used by REST binding.
pub fn number_from_text(text: &str) -> Option<f64> {
    parse_number(text)
}

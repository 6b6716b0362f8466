//! The seven slot-filling tools and the SQL -> tool-sequence compiler.

use indexmap::IndexMap;
use serde_json::{json, Map, Value};

use crate::db::ColumnInfo;
use crate::pool::{Binding, Builtin, Formulation, OutputParam, ParamSpec, ToolPool, ToolSpec};
use crate::runtime::{ToolCall, STARTING_TABLE};
use crate::sql::{Aggregate, ConditionKind, Operand, OrderKey, SqlAst, SqlError, Transform};

pub const DATA_SOURCE_DESCRIPTION: &str = "The location of the data file in csv format.";

/// Columns plus the aggregate output names usable as keys.
pub fn key_enum(columns: &[ColumnInfo]) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> =
        columns.iter().map(|c| (c.key_name.clone(), c.description.clone())).collect();
    for a in Aggregate::ALL {
        out.push((a.name().to_string(), format!("output of a {} aggregation", a.name())));
    }
    out
}

/// A string parameter restricted to column keys, described one per line.
pub fn key_param(lead: &str, keys: &[(String, String)]) -> ParamSpec {
    let mut description = format!("{lead}:");
    for (k, d) in keys {
        description.push_str(&format!("\n * `{k}` - {d}"));
    }
    let mut p = ParamSpec::new("string", description);
    p.allowed = Some(keys.iter().map(|(k, _)| k.clone()).collect());
    p
}

fn enum_param(description: &str, values: impl IntoIterator<Item = &'static str>) -> ParamSpec {
    let mut p = ParamSpec::new("string", description);
    p.allowed = Some(values.into_iter().map(str::to_string).collect());
    p
}

fn spec(
    name: &str,
    description: &str,
    params: Vec<(&str, ParamSpec)>,
    required: &[&str],
    output: (&str, &str),
) -> ToolSpec {
    let mut output_parameters = IndexMap::new();
    output_parameters.insert(
        "output_0".to_string(),
        OutputParam { description: output.1.to_string(), ty: output.0.to_string() },
    );
    ToolSpec {
        name: name.to_string(),
        description: description.to_string(),
        parameters: params.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        required: required.iter().map(|s| s.to_string()).collect(),
        output_parameters,
        path: None,
    }
}

fn data_source() -> ParamSpec {
    ParamSpec::new("string", DATA_SOURCE_DESCRIPTION)
}

/// Specs of the seven tools over the given key enum.
pub fn slot_specs(columns: &[ColumnInfo]) -> Vec<(ToolSpec, Builtin)> {
    let keys = key_enum(columns);
    let conditions = ConditionKind::ALL.map(ConditionKind::name);
    let aggregates = Aggregate::ALL.map(Aggregate::name);
    let csv_out = "The path to a csv file containing";
    vec![
        (
            spec(
                "filter_data",
                "Filter the data, keeping the rows where the value in column 'key_name' satisfies the condition against 'value'.",
                vec![
                    ("data_source", data_source()),
                    ("key_name", key_param("name of key to filter on", &keys)),
                    ("value", ParamSpec::new("string", "The value to compare against; numbers may be passed as numbers")),
                    ("condition", enum_param("The comparison to apply", conditions)),
                ],
                &["data_source", "key_name", "value", "condition"],
                ("string", &format!("{csv_out} the filtered data")),
            ),
            Builtin::FilterData,
        ),
        (
            spec(
                "sort_data",
                "Sort data by the values associated with the chosen key='key_name' If the input data is list-like, returns the sorted list. If the input data is tabular, returns the table with rows sorted by the values in column 'key_name'. If the data is grouped tables, then sort the groups by the value in 'key_name'",
                vec![
                    ("data_source", data_source()),
                    ("key_name", key_param("name of key to sort by", &keys)),
                    ("ascending", ParamSpec::new("boolean", "whether to sort by ascending order")),
                ],
                &["data_source", "key_name", "ascending"],
                ("string", &format!("{csv_out}  data sorted by chosen key")),
            ),
            Builtin::SortData,
        ),
        (
            spec(
                "group_data_by",
                "Group the rows by the values in column 'key_name' and aggregate each group. Returns a table with one row per distinct key holding the key and the aggregate.",
                vec![
                    ("data_source", data_source()),
                    ("key_name", key_param("name of key to group by", &keys)),
                    ("aggregation", enum_param("The aggregation applied to each group", aggregates)),
                    ("target_key", key_param("name of key to aggregate; optional for count", &keys)),
                ],
                &["data_source", "key_name", "aggregation"],
                ("string", &format!("{csv_out} the grouped data")),
            ),
            Builtin::GroupDataBy,
        ),
        (
            spec(
                "aggregate_data",
                "Aggregate the values in column 'key_name' into a single value. count without a key counts rows.",
                vec![
                    ("data_source", data_source()),
                    ("key_name", key_param("name of key to aggregate", &keys)),
                    ("operation", enum_param("The aggregation to compute", aggregates)),
                ],
                &["data_source", "operation"],
                ("string", &format!("{csv_out} the aggregated value")),
            ),
            Builtin::AggregateData,
        ),
        (
            spec(
                "retrieve_data",
                "Return the values in column 'key_name' as a list, in row order.",
                vec![
                    ("data_source", data_source()),
                    ("key_name", key_param("name of key to retrieve", &keys)),
                    ("distinct", ParamSpec::new("boolean", "whether to keep only the first occurrence of each value")),
                    ("limit", ParamSpec::new("integer", "maximum number of values to return, -1 for all")),
                ],
                &["data_source", "key_name"],
                ("array", "The list of retrieved values"),
            ),
            Builtin::RetrieveData,
        ),
        (
            spec(
                "select_unique_values",
                "Return the distinct values in column 'key_name' in order of first appearance.",
                vec![
                    ("data_source", data_source()),
                    ("key_name", key_param("name of key to read", &keys)),
                ],
                &["data_source", "key_name"],
                ("array", "The list of unique values"),
            ),
            Builtin::SelectUniqueValues,
        ),
        (
            spec(
                "transform_data",
                "Rewrite the values in column 'key_name'. The substring operation keeps characters from start_index up to, not including, end_index.",
                vec![
                    ("data_source", data_source()),
                    ("key_name", key_param("name of key to transform", &keys)),
                    ("operation_type", enum_param("The transformation to apply", ["substring"])),
                    (
                        "operation_args",
                        ParamSpec::new("object", "Arguments of the operation, e.g. {\"start_index\": 0, \"end_index\": 10}"),
                    ),
                ],
                &["data_source", "key_name", "operation_type", "operation_args"],
                ("string", &format!("{csv_out} the transformed data")),
            ),
            Builtin::TransformData,
        ),
    ]
}

pub fn build_slot_pool(db: &str, columns: &[ColumnInfo]) -> ToolPool {
    let mut pool = ToolPool::new(Formulation::Slot, db);
    for (spec, op) in slot_specs(columns) {
        pool.insert(spec, Binding::builtin(op));
    }
    pool.column_enum = columns.to_vec();
    pool
}

/// The out-of-pool join initializer for a query.
pub fn initialization_step(ast: &SqlAst, db: &str) -> ToolCall {
    let conditions: Vec<Value> = ast
        .joins
        .iter()
        .map(|j| {
            json!([
                format!("{}.{}", j.left_alias, j.left_col.column),
                format!("{}.{}", j.right_alias, j.right_col.column),
                "INNER"
            ])
        })
        .collect();
    let mut aliases = Map::new();
    for t in &ast.tables {
        aliases.insert(
            t.alias.clone(),
            json!({"original_table_name": t.name, "modified_table_name": t.name}),
        );
    }
    ToolCall::new(
        "initialize_active_data",
        json!({
            "condition_sequence": conditions,
            "alias_to_table_dict": aliases,
            "database_path": format!("{db}.sqlite"),
        }),
        Some(STARTING_TABLE),
    )
}

struct Emitter {
    calls: Vec<ToolCall>,
    table_counter: usize,
    current: String,
}

impl Emitter {
    fn table_step(&mut self, name: &str, prefix: &str, mut args: Map<String, Value>) {
        let label = format!("{prefix}_{}", self.table_counter);
        self.table_counter += 1;
        let mut full = Map::new();
        full.insert("data_source".into(), json!(format!("${}$", self.current)));
        full.append(&mut args);
        self.calls.push(ToolCall { name: name.into(), arguments: full, label: Some(label.clone()) });
        self.current = label;
    }
}

fn args(v: Value) -> Map<String, Value> {
    v.as_object().cloned().unwrap_or_default()
}

/// transform_data rewrites a column in place, so the original values are gone
/// for any later use of that column.
fn reject_transformed_reuse(ast: &SqlAst) -> Result<(), SqlError> {
    let mut transformed: Vec<(&str, Option<Transform>)> = Vec::new();
    for p in &ast.where_conjuncts {
        let key = p.column.prefixed_name.as_str();
        if let Some((_, t)) = transformed.iter().find(|(k, _)| *k == key) {
            if *t != p.transform {
                return Err(SqlError::Unsupported(format!("reuse of transformed column `{key}`")));
            }
        }
        if p.transform.is_some() || transformed.iter().any(|(k, _)| *k == key) {
            transformed.push((key, p.transform));
        }
    }
    let mut used = Vec::new();
    let mut probe = ast.clone();
    probe.where_conjuncts.clear();
    probe.for_each_column_mut(|c| used.push(c.prefixed_name.clone()));
    match transformed.iter().find(|(k, t)| t.is_some() && used.iter().any(|u| u == k)) {
        Some((k, _)) => Err(SqlError::Unsupported(format!("reuse of transformed column `{k}`"))),
        None => Ok(()),
    }
}

/// Compiles a resolved query into the gold SLOT sequence (without the initializer).
pub fn compile_slot(ast: &SqlAst) -> Result<Vec<ToolCall>, SqlError> {
    if ast.has_derived() {
        return Err(SqlError::Unsupported("arithmetic expression".into()));
    }
    reject_transformed_reuse(ast)?;
    let mut e = Emitter { calls: Vec::new(), table_counter: 0, current: STARTING_TABLE.to_string() };
    for p in &ast.where_conjuncts {
        let key = &p.column.prefixed_name;
        if let Some(Transform::Substring { start_index, end_index }) = p.transform {
            e.table_step(
                "transform_data",
                "TRANSFORMED_DF",
                args(json!({
                    "key_name": key,
                    "operation_type": "substring",
                    "operation_args": {"start_index": start_index, "end_index": end_index},
                })),
            );
        }
        e.table_step(
            "filter_data",
            "FILTERED_DF",
            args(json!({"key_name": key, "value": p.value.to_tool_value(), "condition": p.condition.name()})),
        );
    }

    if let Some(agg) = ast.plain_aggregate() {
        let mut a = Map::new();
        match &agg.operand {
            Operand::Column(c) => {
                a.insert("key_name".into(), json!(c.prefixed_name));
            }
            Operand::Star => {}
            Operand::Derived(_) => return Err(SqlError::Unsupported("arithmetic expression".into())),
        }
        a.insert("operation".into(), json!(agg.aggregate.unwrap().name()));
        e.table_step("aggregate_data", "AGGREGATED_DF", a);
        return Ok(e.calls);
    }

    if let Some(g) = &ast.group_by {
        let mut a = args(json!({"key_name": g.key.prefixed_name, "aggregation": g.aggregation.name()}));
        if let Some(t) = &g.target {
            a.insert("target_key".into(), json!(t.prefixed_name));
        }
        e.table_step("group_data_by", "GROUPED_DF", a);
    }

    if let Some(o) = &ast.order_by {
        let key = match &o.key {
            OrderKey::Column(c) => c.prefixed_name.clone(),
            OrderKey::Aggregate { aggregate, .. } => aggregate.name().to_string(),
            OrderKey::Derived(_) => return Err(SqlError::Unsupported("arithmetic expression".into())),
        };
        e.table_step("sort_data", "SORTED_DF", args(json!({"key_name": key, "ascending": o.ascending})));
    }

    let limit = ast.limit.map(|l| l as i64).unwrap_or(-1);
    for (i, p) in ast.select_items.iter().enumerate() {
        let key = match (&p.operand, p.aggregate) {
            (_, Some(a)) => a.name().to_string(),
            (Operand::Column(c), None) => c.prefixed_name.clone(),
            (Operand::Star, None) => return Err(SqlError::Unsupported("SELECT *".into())),
            (Operand::Derived(_), None) => return Err(SqlError::Unsupported("arithmetic expression".into())),
        };
        e.calls.push(ToolCall {
            name: "retrieve_data".into(),
            arguments: args(json!({
                "data_source": format!("${}$", e.current),
                "key_name": key,
                "distinct": ast.distinct,
                "limit": limit,
            })),
            label: Some(format!("SELECT_COL_{i}")),
        });
    }
    Ok(e.calls)
}

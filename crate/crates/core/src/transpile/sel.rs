//! Selection formulation: categorical arguments folded into tool names.

use serde_json::{json, Map, Value};

use crate::pool::{Binding, Builtin, Formulation, ParamSpec, Target, ToolPool, ToolSpec};
use crate::runtime::ToolCall;
use crate::sql::{Aggregate, ConditionKind};

use super::slot::DATA_SOURCE_DESCRIPTION;

fn specialize(spec: &ToolSpec, name: String, drop: &str, note: &str) -> ToolSpec {
    let mut s = spec.clone();
    s.name = name;
    s.parameters.shift_remove(drop);
    s.required.retain(|r| r != drop);
    if !note.is_empty() {
        s.description = format!("{} {note}", s.description);
    }
    s
}

pub fn getter_name(key: &str) -> String {
    format!("get_{key}")
}

fn getter(key: &str, description: &str) -> (ToolSpec, Binding) {
    let mut spec = ToolSpec {
        name: getter_name(key),
        description: format!("Get the values of column `{key}` ({description}) as a list, in row order."),
        parameters: Default::default(),
        required: vec!["data_source".into()],
        output_parameters: Default::default(),
        path: None,
    };
    spec.parameters.insert("data_source".into(), ParamSpec::new("string", DATA_SOURCE_DESCRIPTION));
    spec.output_parameters.insert(
        "output_0".into(),
        crate::pool::OutputParam { description: "The list of values".into(), ty: "array".into() },
    );
    let binding = Binding::builtin(Builtin::RetrieveData)
        .with_fixed("key_name", json!(key))
        .with_fixed("distinct", json!(false))
        .with_fixed("limit", json!(-1));
    (spec, binding)
}

fn list_helper(name: &str, description: &str, limit: bool, op: Builtin) -> (ToolSpec, Binding) {
    let mut spec = ToolSpec {
        name: name.into(),
        description: description.into(),
        parameters: Default::default(),
        required: vec!["data_source".into()],
        output_parameters: Default::default(),
        path: None,
    };
    spec.parameters.insert("data_source".into(), ParamSpec::new("string", "Reference to a list of values"));
    if limit {
        spec.parameters.insert("limit".into(), ParamSpec::new("integer", "maximum number of values to keep"));
        spec.required.push("limit".into());
    }
    spec.output_parameters.insert(
        "output_0".into(),
        crate::pool::OutputParam { description: "The resulting list".into(), ty: "array".into() },
    );
    (spec, Binding::builtin(op))
}

/// Expands each categorical argument of the slot tools into separate tools and
/// adds one getter per column key.
pub fn derive_sel_pool(slot: &ToolPool) -> ToolPool {
    assert_eq!(slot.formulation, Formulation::Slot);
    let mut pool = ToolPool::new(Formulation::Sel, &slot.db);
    pool.column_enum = slot.column_enum.clone();
    for entry in slot.tools.values() {
        let Target::Builtin { op } = entry.binding.target else { continue };
        let s = &entry.spec;
        match op {
            Builtin::FilterData => {
                for c in ConditionKind::ALL {
                    let spec = specialize(s, format!("select_data_{}", c.name()), "condition", &format!("Condition: {}.", c.name()));
                    pool.insert(spec, Binding::builtin(op).with_fixed("condition", json!(c.name())));
                }
            }
            Builtin::SortData => {
                for (suffix, asc) in [("ascending", true), ("descending", false)] {
                    let spec = specialize(s, format!("sort_data_{suffix}"), "ascending", "");
                    pool.insert(spec, Binding::builtin(op).with_fixed("ascending", json!(asc)));
                }
            }
            Builtin::GroupDataBy => {
                for a in Aggregate::ALL {
                    let spec = specialize(s, format!("group_data_by_{}", a.name()), "aggregation", &format!("Aggregation: {}.", a.name()));
                    pool.insert(spec, Binding::builtin(op).with_fixed("aggregation", json!(a.name())));
                }
            }
            Builtin::AggregateData => {
                for a in Aggregate::ALL {
                    let spec = specialize(s, format!("aggregate_data_{}", a.name()), "operation", &format!("Operation: {}.", a.name()));
                    pool.insert(spec, Binding::builtin(op).with_fixed("operation", json!(a.name())));
                }
            }
            Builtin::TransformData => {
                let spec = specialize(s, "transform_data_substring".into(), "operation_type", "");
                pool.insert(spec, Binding::builtin(op).with_fixed("operation_type", json!("substring")));
            }
            Builtin::SelectUniqueValues => pool.insert(s.clone(), entry.binding.clone()),
            Builtin::RetrieveData => {
                for c in &slot.column_enum {
                    let (spec, b) = getter(&c.key_name, &c.description);
                    pool.insert(spec, b);
                }
                for a in Aggregate::ALL {
                    let (spec, b) = getter(a.name(), &format!("output of a {} aggregation", a.name()));
                    pool.insert(spec, b);
                }
                let (spec, b) = list_helper(
                    "distinct_values",
                    "Keep the first occurrence of each value in a list.",
                    false,
                    Builtin::DistinctValues,
                );
                pool.insert(spec, b);
                let (spec, b) =
                    list_helper("limit_values", "Keep the first 'limit' values of a list.", true, Builtin::LimitValues);
                pool.insert(spec, b);
            }
            Builtin::DistinctValues | Builtin::LimitValues => {}
        }
    }
    pool
}

/// Number of tools that do not depend on the schema.
pub const GENERIC_TOOL_COUNT: usize = 8 + 2 + 5 + 5 + 1 + 1 + 5 + 2;

/// Tools available to one instance: generic tools plus getters of its joined columns.
pub fn available_tools(pool: &ToolPool, joined_columns: &[String]) -> Vec<String> {
    let schema_getters: std::collections::HashSet<String> =
        pool.column_enum.iter().map(|c| getter_name(&c.key_name)).collect();
    let wanted: std::collections::HashSet<String> = joined_columns.iter().map(|c| getter_name(c)).collect();
    pool.tools
        .keys()
        .filter(|n| !schema_getters.contains(*n) || wanted.contains(*n))
        .cloned()
        .collect()
}

fn str_of<'a>(args: &'a Map<String, Value>, key: &str) -> &'a str {
    args.get(key).and_then(Value::as_str).unwrap_or_default()
}

/// Call-for-call rewrite of a slot sequence.
pub fn rewrite_to_sel(calls: &[ToolCall]) -> Vec<ToolCall> {
    let mut out = Vec::new();
    for call in calls {
        let mut args = call.arguments.clone();
        let mut drop_into_name = |key: &str, prefix: &str| -> String {
            let v = args.shift_remove(key).unwrap_or(Value::Null);
            let text = match &v {
                Value::Bool(true) => "ascending".to_string(),
                Value::Bool(false) => "descending".to_string(),
                other => other.as_str().unwrap_or_default().to_string(),
            };
            format!("{prefix}_{text}")
        };
        let name = match call.name.as_str() {
            "filter_data" => drop_into_name("condition", "select_data"),
            "sort_data" => drop_into_name("ascending", "sort_data"),
            "group_data_by" => drop_into_name("aggregation", "group_data_by"),
            "aggregate_data" => drop_into_name("operation", "aggregate_data"),
            "transform_data" => drop_into_name("operation_type", "transform_data"),
            "retrieve_data" => {
                let label = call.label.clone().unwrap_or_default();
                let key = str_of(&call.arguments, "key_name").to_string();
                let distinct = call.arguments.get("distinct").and_then(Value::as_bool).unwrap_or(false);
                let limit = call.arguments.get("limit").and_then(Value::as_i64).unwrap_or(-1);
                let mut chain: Vec<(String, Map<String, Value>)> = vec![(
                    getter_name(&key),
                    [("data_source".to_string(), call.arguments["data_source"].clone())].into_iter().collect(),
                )];
                if distinct {
                    chain.push(("distinct_values".into(), Map::new()));
                }
                if limit != -1 {
                    let mut m = Map::new();
                    m.insert("limit".into(), json!(limit));
                    chain.push(("limit_values".into(), m));
                }
                let n = chain.len();
                let mut prev = String::new();
                for (i, (name, mut a)) in chain.into_iter().enumerate() {
                    let step_label = if i + 1 == n {
                        label.clone()
                    } else {
                        format!("{}_{label}", ["RAW", "DISTINCT"][i])
                    };
                    if i > 0 {
                        a.insert("data_source".into(), json!(format!("${prev}$")));
                    }
                    out.push(ToolCall { name, arguments: a, label: Some(step_label.clone()) });
                    prev = step_label;
                }
                continue;
            }
            other => other.to_string(),
        };
        out.push(ToolCall { name, arguments: args, label: call.label.clone() });
    }
    out
}

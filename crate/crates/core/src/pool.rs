//! Tool pools: the specs a model sees plus the bindings the runtime executes.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::db::ColumnInfo;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Formulation {
    #[serde(rename = "SLOT")]
    Slot,
    #[serde(rename = "SEL")]
    Sel,
    #[serde(rename = "REST")]
    Rest,
}

impl Formulation {
    pub const ALL: [Formulation; 3] = [Formulation::Slot, Formulation::Sel, Formulation::Rest];

    pub fn name(self) -> &'static str {
        match self {
            Formulation::Slot => "slot",
            Formulation::Sel => "sel",
            Formulation::Rest => "rest",
        }
    }

    pub fn parse(text: &str) -> Option<Formulation> {
        Formulation::ALL.into_iter().find(|f| f.name().eq_ignore_ascii_case(text))
    }
}

impl std::fmt::Display for Formulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub description: String,
    #[serde(rename = "type")]
    pub ty: String,
    #[serde(rename = "enum", default, skip_serializing_if = "Option::is_none")]
    pub allowed: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    /// Original parameter name, kept when the pool is obfuscated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_name: Option<String>,
}

impl ParamSpec {
    pub fn new(ty: &str, description: impl Into<String>) -> ParamSpec {
        ParamSpec {
            description: description.into(),
            ty: ty.to_string(),
            allowed: None,
            title: None,
            original_name: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputParam {
    pub description: String,
    #[serde(rename = "type")]
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: IndexMap<String, ParamSpec>,
    pub required: Vec<String>,
    pub output_parameters: IndexMap<String, OutputParam>,
    /// REST endpoints only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

/// The executable operations behind SLOT and SEL tools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    FilterData,
    SortData,
    GroupDataBy,
    AggregateData,
    RetrieveData,
    SelectUniqueValues,
    TransformData,
    DistinctValues,
    LimitValues,
}

impl Builtin {
    pub fn name(self) -> &'static str {
        match self {
            Builtin::FilterData => "filter_data",
            Builtin::SortData => "sort_data",
            Builtin::GroupDataBy => "group_data_by",
            Builtin::AggregateData => "aggregate_data",
            Builtin::RetrieveData => "retrieve_data",
            Builtin::SelectUniqueValues => "select_unique_values",
            Builtin::TransformData => "transform_data",
            Builtin::DistinctValues => "distinct_values",
            Builtin::LimitValues => "limit_values",
        }
    }
}

/// One parameterized GET endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestEndpoint {
    pub name: String,
    pub description: String,
    pub path: String,
    pub db: String,
    /// Key of the response object.
    pub resource: String,
    pub arguments: IndexMap<String, ParamSpec>,
    pub sql_template: String,
    /// Argument bound to each `?`, in placeholder order.
    pub placeholders: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum Target {
    Builtin { op: Builtin },
    Rest { endpoint: RestEndpoint },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub target: Target,
    /// Arguments fixed by the tool name (SEL) and merged into every call.
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub fixed: Map<String, Value>,
    /// Exposed argument name -> canonical argument name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub arg_renames: BTreeMap<String, String>,
}

impl Binding {
    pub fn builtin(op: Builtin) -> Binding {
        Binding { target: Target::Builtin { op }, fixed: Map::new(), arg_renames: BTreeMap::new() }
    }

    pub fn rest(endpoint: RestEndpoint) -> Binding {
        Binding { target: Target::Rest { endpoint }, fixed: Map::new(), arg_renames: BTreeMap::new() }
    }

    pub fn with_fixed(mut self, key: &str, value: Value) -> Binding {
        self.fixed.insert(key.to_string(), value);
        self
    }

    /// Call arguments in canonical names with fixed values merged in.
    pub fn canonical_args(&self, args: &Map<String, Value>) -> Map<String, Value> {
        let mut out = Map::new();
        for (k, v) in args {
            let key = self.arg_renames.get(k).cloned().unwrap_or_else(|| k.clone());
            out.insert(key, v.clone());
        }
        for (k, v) in &self.fixed {
            out.insert(k.clone(), v.clone());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub spec: ToolSpec,
    pub binding: Binding,
}

/// The tools of one formulation over one database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolPool {
    pub formulation: Formulation,
    pub db: String,
    pub tools: IndexMap<String, PoolEntry>,
    pub column_enum: Vec<ColumnInfo>,
}

impl ToolPool {
    pub fn new(formulation: Formulation, db: &str) -> ToolPool {
        ToolPool { formulation, db: db.to_string(), tools: IndexMap::new(), column_enum: Vec::new() }
    }

    pub fn insert(&mut self, spec: ToolSpec, binding: Binding) {
        self.tools.insert(spec.name.clone(), PoolEntry { spec, binding });
    }

    pub fn get(&self, name: &str) -> Option<&PoolEntry> {
        self.tools.get(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.tools.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }
}

/// All pools of a formulation, keyed by database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSet {
    pub formulation: Formulation,
    pub pools: BTreeMap<String, ToolPool>,
}

impl PoolSet {
    pub fn new(formulation: Formulation) -> PoolSet {
        PoolSet { formulation, pools: BTreeMap::new() }
    }

    pub fn pool(&self, db: &str) -> Option<&ToolPool> {
        self.pools.get(db)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pool serializes")
    }

    /// sha256 of the canonical serialization.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn rest_endpoints(&self) -> impl Iterator<Item = &RestEndpoint> {
        self.pools.values().flat_map(|p| p.tools.values()).filter_map(|e| match &e.binding.target {
            Target::Rest { endpoint } => Some(endpoint),
            _ => None,
        })
    }
}

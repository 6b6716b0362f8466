//! Tool specification documents, name obfuscation, and tool shortlists.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::pool::{Formulation, ParamSpec, ToolPool, ToolSpec};
use crate::runtime::ToolCall;
use crate::transpile::slot::{key_enum, key_param};

fn param_json(p: &ParamSpec) -> Value {
    let mut schema = Map::new();
    schema.insert("type".into(), json!(p.ty));
    if let Some(values) = &p.allowed {
        schema.insert("enum".into(), json!(values));
    }
    let mut out = Map::new();
    out.insert("description".into(), json!(p.description));
    out.insert("schema".into(), Value::Object(schema));
    if let Some(t) = &p.title {
        out.insert("title".into(), json!(t));
    }
    if let Some(n) = &p.original_name {
        out.insert("name".into(), json!(n));
    }
    Value::Object(out)
}

/// One tool in OpenAPI-like form.
pub fn emit_tool_spec(spec: &ToolSpec) -> Value {
    let properties: Map<String, Value> = spec.parameters.iter().map(|(k, p)| (k.clone(), param_json(p))).collect();
    let outputs: Map<String, Value> = spec
        .output_parameters
        .iter()
        .map(|(k, o)| (k.clone(), json!({"description": o.description, "type": o.ty})))
        .collect();
    let mut out = Map::new();
    out.insert("name".into(), json!(spec.name));
    out.insert("description".into(), json!(spec.description));
    out.insert(
        "parameters".into(),
        json!({"properties": properties, "required": spec.required, "type": "object"}),
    );
    out.insert("output_parameters".into(), json!({"properties": outputs}));
    if let Some(p) = &spec.path {
        out.insert("path".into(), json!(p));
    }
    Value::Object(out)
}

fn is_key_param(pool: &ToolPool, name: &str, p: &ParamSpec) -> bool {
    let original = p.original_name.as_deref().unwrap_or(name);
    pool.formulation != Formulation::Rest && matches!(original, "key_name" | "target_key") && p.allowed.is_some()
}

/// Spec list for a pool. `tools` restricts and orders the tools; `columns`
/// narrows key enums to the instance's joined columns.
pub fn emit_pool(pool: &ToolPool, tools: Option<&[String]>, columns: Option<&[String]>) -> Value {
    let names: Vec<String> = match tools {
        Some(t) => t.iter().filter(|n| pool.get(n).is_some()).cloned().collect(),
        None => pool.names(),
    };
    let keys = columns.map(|cols| {
        let narrowed: Vec<_> = pool.column_enum.iter().filter(|c| cols.contains(&c.key_name)).cloned().collect();
        key_enum(&narrowed)
    });
    let specs = names
        .iter()
        .map(|n| {
            let mut spec = pool.get(n).unwrap().spec.clone();
            if let Some(keys) = &keys {
                for (name, p) in spec.parameters.iter_mut() {
                    if is_key_param(pool, name, p) {
                        let lead = p.description.split(':').next().unwrap_or_default().to_string();
                        let mut narrowed = key_param(&lead, keys);
                        narrowed.original_name = p.original_name.clone();
                        *p = narrowed;
                    }
                }
            }
            emit_tool_spec(&spec)
        })
        .collect();
    Value::Array(specs)
}

/// Tool and per-tool argument renames.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObfuscationMap {
    pub tools: IndexMap<String, String>,
    pub args: IndexMap<String, IndexMap<String, String>>,
}

impl ObfuscationMap {
    pub fn invert(&self) -> ObfuscationMap {
        let mut inv = ObfuscationMap::default();
        for (orig, new) in &self.tools {
            inv.tools.insert(new.clone(), orig.clone());
            if let Some(args) = self.args.get(orig) {
                inv.args.insert(new.clone(), args.iter().map(|(a, b)| (b.clone(), a.clone())).collect());
            }
        }
        inv
    }

    pub fn rename_call(&self, call: &ToolCall) -> ToolCall {
        let args = self.args.get(&call.name);
        ToolCall {
            name: self.tools.get(&call.name).cloned().unwrap_or_else(|| call.name.clone()),
            arguments: call
                .arguments
                .iter()
                .map(|(k, v)| (args.and_then(|a| a.get(k)).cloned().unwrap_or_else(|| k.clone()), v.clone()))
                .collect(),
            label: call.label.clone(),
        }
    }

    pub fn rename_calls(&self, calls: &[ToolCall]) -> Vec<ToolCall> {
        calls.iter().map(|c| self.rename_call(c)).collect()
    }

    pub fn rename_tools(&self, names: &[String]) -> Vec<String> {
        names.iter().map(|n| self.tools.get(n).cloned().unwrap_or_else(|| n.clone())).collect()
    }
}

/// Renames every tool to `FUNC_N` (seeded permutation) and each argument to
/// `ARG_K` (per tool, from 1). Descriptions and titles are kept; bindings
/// map the new argument names back so execution is unchanged.
pub fn obfuscate_pool(pool: &ToolPool, seed: u64) -> (ToolPool, ObfuscationMap) {
    let mut ids: Vec<usize> = (0..pool.len()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = ToolPool::new(pool.formulation, &pool.db);
    out.column_enum = pool.column_enum.clone();
    let mut map = ObfuscationMap::default();
    for (i, (name, entry)) in pool.tools.iter().enumerate() {
        let new_name = format!("FUNC_{}", ids[i]);
        let mut spec = entry.spec.clone();
        let mut binding = entry.binding.clone();
        let mut arg_map = IndexMap::new();
        let mut params = IndexMap::new();
        binding.arg_renames.clear();
        for (k, (arg, p)) in entry.spec.parameters.iter().enumerate() {
            let new_arg = format!("ARG_{}", k + 1);
            let mut p = p.clone();
            p.original_name.get_or_insert_with(|| arg.clone());
            let canonical = entry.binding.arg_renames.get(arg).cloned().unwrap_or_else(|| arg.clone());
            binding.arg_renames.insert(new_arg.clone(), canonical);
            arg_map.insert(arg.clone(), new_arg.clone());
            params.insert(new_arg, p);
        }
        spec.required = spec.required.iter().map(|r| arg_map.get(r).cloned().unwrap_or_else(|| r.clone())).collect();
        spec.parameters = params;
        spec.name = new_name.clone();
        map.tools.insert(name.clone(), new_name.clone());
        map.args.insert(name.clone(), arg_map);
        out.insert(spec, binding);
    }
    // Keep FUNC_N order stable by number.
    out.tools.sort_by(|a, _, b, _| func_index(a).cmp(&func_index(b)));
    (out, map)
}

fn func_index(name: &str) -> usize {
    name.strip_prefix("FUNC_").and_then(|n| n.parse().ok()).unwrap_or(usize::MAX)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortlist {
    pub sample_id: usize,
    pub fraction: f64,
    pub tools: Vec<String>,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ShortlistError {
    #[error("fraction {0} must be in (0, 1]")]
    FractionTooSmall(f64),
    #[error("gold tool `{0}` is not in the universe")]
    GoldNotInUniverse(String),
}

/// floor(fraction * n), clamped to at least `min`.
pub fn shortlist_size(n: usize, fraction: f64, min: usize) -> usize {
    (((fraction * n as f64) + 1e-9).floor() as usize).max(min).min(n)
}

/// Seeded sample keeping every gold tool; output follows universe order.
pub fn shortlist_tools(
    universe: &[String],
    gold: &[String],
    fraction: f64,
    seed: u64,
    sample_id: usize,
) -> Result<Shortlist, ShortlistError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ShortlistError::FractionTooSmall(fraction));
    }
    let mut gold_set: Vec<&String> = Vec::new();
    for g in gold {
        if !universe.contains(g) {
            return Err(ShortlistError::GoldNotInUniverse(g.clone()));
        }
        if !gold_set.contains(&g) {
            gold_set.push(g);
        }
    }
    let size = shortlist_size(universe.len(), fraction, gold_set.len());
    let rng_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(sample_id as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let others: Vec<usize> = (0..universe.len()).filter(|&i| !gold_set.contains(&&universe[i])).collect();
    let extra = rand::seq::index::sample(&mut rng, others.len(), size - gold_set.len());
    let mut keep: Vec<usize> = extra.into_iter().map(|j| others[j]).collect();
    keep.extend((0..universe.len()).filter(|&i| gold_set.contains(&&universe[i])));
    keep.sort_unstable();
    Ok(Shortlist { sample_id, fraction, tools: keep.into_iter().map(|i| universe[i].clone()).collect(), rng_seed })
}

/// Spec documents for every pool of a set, keyed by database.
pub fn emit_pool_set(pools: &BTreeMap<String, ToolPool>) -> Value {
    Value::Object(pools.iter().map(|(db, p)| (db.clone(), emit_pool(p, None, None))).collect())
}

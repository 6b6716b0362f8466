//! Corpus -> verified datasets and tool pools for all three formulations.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::db::{self, DbError, DbSchema};
use crate::endpoint::LocalRest;
use crate::pool::{Binding, Formulation, OutputParam, PoolSet, RestEndpoint, ToolPool, ToolSpec};
use crate::runtime::{execute_sequence, LabelEnv, RestBackend, ToolCall};
use crate::sql::{parse_and_resolve, SqlAst};
use crate::transpile::{rest, sel, slot, verify_equivalence, VerificationRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub dataset_name: String,
    pub input: String,
    pub query: String,
    /// Optional resource name for the generated endpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rest_resource: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("corpus line {line}: {source}")]
    Corpus { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Db(#[from] DbError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub fn parse_corpus(text: &str) -> Result<Vec<CorpusEntry>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| DatasetError::Corpus { line: i + 1, source }))
        .collect()
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusEntry>, DatasetError> {
    parse_corpus(&std::fs::read_to_string(path)?)
}

/// One dataset row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub sample_id: usize,
    pub dataset_name: String,
    pub input: String,
    pub query: String,
    pub gold_answer: Value,
    pub output: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initialization_step: Option<ToolCall>,
    /// Names of the tools offered for this instance.
    pub tools: Vec<String>,
    /// Prefixed columns of the joined starting table.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub columns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_after_executing_api: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DbStats {
    pub retained: usize,
    pub tools: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub formulation: Formulation,
    pub corpus_size: usize,
    /// Queries rejected by the parser or schema resolution, by reason.
    pub dialect_discards: BTreeMap<String, usize>,
    /// Queries the parser accepts but this formulation cannot express.
    pub formulation_discards: BTreeMap<String, usize>,
    pub verification_discards: usize,
    pub retained: usize,
    pub tool_count: usize,
    /// Mean gold tool calls per retained instance, initializer excluded.
    pub avg_calls_per_query: f64,
    pub per_db: BTreeMap<String, DbStats>,
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub formulation: Formulation,
    pub instances: Vec<EvalInstance>,
    pub pools: PoolSet,
    pub verification: Vec<VerificationRecord>,
    pub stats: BuildStats,
}

struct Prepared {
    sample_id: usize,
    entry: CorpusEntry,
    ast: SqlAst,
    gold: Value,
    columns: Vec<String>,
}

/// Runs a query against its database and returns rows as JSON arrays.
pub fn sql_oracle(db_root: &Path, db_name: &str, query: &str) -> Result<Value, String> {
    let conn = db::open_read_only(&db::database_path(db_root, db_name)).map_err(|e| e.to_string())?;
    let rows = db::query_rows(&conn, query, &[]).map_err(|e| e.to_string())?;
    Ok(db::rows_to_json(&rows))
}

fn bump(map: &mut BTreeMap<String, usize>, key: &str) {
    *map.entry(key.to_string()).or_default() += 1;
}

/// Executes a gold sequence in a fresh environment.
pub fn run_gold(
    db_root: &Path,
    pool: &ToolPool,
    init: Option<&ToolCall>,
    calls: &[ToolCall],
    rest: Option<std::sync::Arc<dyn RestBackend>>,
) -> Result<Value, String> {
    let mut env = LabelEnv::new(db_root).map_err(|e| e.to_string())?;
    if let Some(r) = rest {
        env = env.with_rest(r);
    }
    if let Some(init) = init {
        env.initialize(init).map_err(|e| format!("initialization: {e}"))?;
    }
    execute_sequence(calls, &mut env, pool).result.map_err(|e| e.to_string())
}

pub fn rest_tool_spec(e: &RestEndpoint) -> ToolSpec {
    let mut output_parameters = IndexMap::new();
    output_parameters.insert(
        "output_0".to_string(),
        OutputParam { description: format!("JSON object with key `{}` holding the results", e.resource), ty: "object".into() },
    );
    ToolSpec {
        name: e.name.clone(),
        description: e.description.clone(),
        parameters: e.arguments.clone(),
        required: e.arguments.keys().cloned().collect(),
        output_parameters,
        path: Some(e.path.clone()),
    }
}

/// Builds all three formulations from a corpus.
pub fn build(corpus: &[CorpusEntry], db_root: &Path) -> Result<Vec<BuildOutput>, DatasetError> {
    let db_names: BTreeSet<String> = corpus.iter().map(|e| e.dataset_name.clone()).collect();
    let mut schemas = BTreeMap::new();
    for name in &db_names {
        schemas.insert(name.clone(), DbSchema::load(db_root, name)?);
    }

    let mut dialect_discards = BTreeMap::new();
    let mut prepared = Vec::new();
    let gold: Vec<Result<Value, String>> =
        corpus.par_iter().map(|e| sql_oracle(db_root, &e.dataset_name, &e.query)).collect();
    for (i, entry) in corpus.iter().enumerate() {
        let schema = &schemas[&entry.dataset_name];
        let ast = match parse_and_resolve(&entry.query, schema) {
            Ok(ast) => ast,
            Err(e) => {
                tracing::debug!(sample_id = i, error = %e, "query outside the dialect");
                bump(&mut dialect_discards, e.kind());
                continue;
            }
        };
        let gold = match &gold[i] {
            Ok(g) => g.clone(),
            Err(e) => {
                tracing::warn!(sample_id = i, error = %e, "oracle query failed");
                bump(&mut dialect_discards, "SqlExecution");
                continue;
            }
        };
        let columns = schema
            .joined_columns(ast.table_names())
            .map(|c| c.into_iter().map(|c| c.key_name).collect())
            .unwrap_or_default();
        prepared.push(Prepared { sample_id: i, entry: entry.clone(), ast, gold, columns });
    }

    let mut slot_pools = PoolSet::new(Formulation::Slot);
    let mut sel_pools = PoolSet::new(Formulation::Sel);
    for (name, schema) in &schemas {
        let p = slot::build_slot_pool(name, &schema.all_columns());
        sel_pools.pools.insert(name.clone(), sel::derive_sel_pool(&p));
        slot_pools.pools.insert(name.clone(), p);
    }

    let mut outputs = Vec::new();
    for formulation in [Formulation::Slot, Formulation::Sel] {
        let pools = if formulation == Formulation::Slot { &slot_pools } else { &sel_pools };
        outputs.push(build_tabular(formulation, corpus.len(), &prepared, pools, db_root, &dialect_discards));
    }
    outputs.push(build_rest(corpus.len(), &prepared, &schemas, db_root, &dialect_discards));
    Ok(outputs)
}

fn build_tabular(
    formulation: Formulation,
    corpus_size: usize,
    prepared: &[Prepared],
    pools: &PoolSet,
    db_root: &Path,
    dialect_discards: &BTreeMap<String, usize>,
) -> BuildOutput {
    let results: Vec<Result<(EvalInstance, VerificationRecord), String>> = prepared
        .par_iter()
        .map(|p| {
            let slot_calls = slot::compile_slot(&p.ast).map_err(|e| e.kind().to_string())?;
            let db = &p.entry.dataset_name;
            let pool = pools.pool(db).expect("pool per database");
            let (calls, tools) = match formulation {
                Formulation::Sel => (sel::rewrite_to_sel(&slot_calls), sel::available_tools(pool, &p.columns)),
                _ => (slot_calls, pool.names()),
            };
            let init = slot::initialization_step(&p.ast, db);
            let actual = run_gold(db_root, pool, Some(&init), &calls, None);
            let record = verify_equivalence(p.sample_id, formulation, &p.gold, actual);
            let instance = EvalInstance {
                sample_id: p.sample_id,
                dataset_name: db.clone(),
                input: p.entry.input.clone(),
                query: p.entry.query.clone(),
                gold_answer: p.gold.clone(),
                output: calls,
                initialization_step: Some(init),
                tools,
                columns: p.columns.clone(),
                output_after_executing_api: None,
            };
            Ok((instance, record))
        })
        .collect();

    let mut formulation_discards = BTreeMap::new();
    let mut instances = Vec::new();
    let mut verification = Vec::new();
    for r in results {
        match r {
            Err(kind) => bump(&mut formulation_discards, &kind),
            Ok((inst, rec)) => {
                if rec.matched {
                    instances.push(inst);
                } else {
                    tracing::warn!(sample_id = rec.sample_id, reason = ?rec.discard_reason, "instance discarded");
                }
                verification.push(rec);
            }
        }
    }
    let stats = make_stats(formulation, corpus_size, dialect_discards, formulation_discards, &verification, &instances, pools);
    BuildOutput { formulation, instances, pools: pools.clone(), verification, stats }
}

fn build_rest(
    corpus_size: usize,
    prepared: &[Prepared],
    schemas: &BTreeMap<String, DbSchema>,
    db_root: &Path,
    dialect_discards: &BTreeMap<String, usize>,
) -> BuildOutput {
    let synthesized: Vec<rest::Synthesized> = prepared
        .iter()
        .map(|p| rest::synthesize_endpoint(&p.ast, &schemas[&p.entry.dataset_name], p.entry.rest_resource.as_deref()))
        .collect();
    let endpoints: Vec<RestEndpoint> = synthesized.iter().map(|s| s.endpoint.clone()).collect();
    let (survivors, mapping) = rest::deduplicate(&endpoints);

    // Every survivor goes in a provisional pool so gold calls can run.
    let mut all = PoolSet::new(Formulation::Rest);
    for e in &survivors {
        all.pools
            .entry(e.db.clone())
            .or_insert_with(|| ToolPool::new(Formulation::Rest, &e.db))
            .insert(rest_tool_spec(e), Binding::rest(e.clone()));
    }
    let backend: std::sync::Arc<dyn RestBackend> = std::sync::Arc::new(LocalRest::new(db_root));

    let results: Vec<(EvalInstance, VerificationRecord)> = prepared
        .par_iter()
        .zip(synthesized.par_iter())
        .zip(mapping.par_iter())
        .map(|((p, s), &m)| {
            let e = &survivors[m];
            let call = rest::gold_call(e, &s.arguments);
            let pool = all.pool(&e.db).expect("pool per database");
            let raw = backend.call(e, &call.arguments);
            let actual = run_gold(db_root, pool, None, std::slice::from_ref(&call), Some(backend.clone()));
            let record = verify_equivalence(p.sample_id, Formulation::Rest, &p.gold, actual);
            let instance = EvalInstance {
                sample_id: p.sample_id,
                dataset_name: p.entry.dataset_name.clone(),
                input: p.entry.input.clone(),
                query: p.entry.query.clone(),
                gold_answer: p.gold.clone(),
                output: vec![call],
                initialization_step: None,
                tools: Vec::new(),
                columns: Vec::new(),
                output_after_executing_api: raw.ok().map(|v| v.to_string()),
            };
            (instance, record)
        })
        .collect();

    let mut instances = Vec::new();
    let mut verification = Vec::new();
    let mut used: HashMap<String, BTreeSet<String>> = HashMap::new();
    for (inst, rec) in results {
        if rec.matched {
            used.entry(inst.dataset_name.clone()).or_default().insert(inst.output[0].name.clone());
            instances.push(inst);
        }
        verification.push(rec);
    }
    let mut pools = PoolSet::new(Formulation::Rest);
    for (db, names) in &used {
        let source = &all.pools[db];
        let mut pool = ToolPool::new(Formulation::Rest, db);
        for name in names {
            let entry = source.get(name).unwrap();
            pool.insert(entry.spec.clone(), entry.binding.clone());
        }
        pools.pools.insert(db.clone(), pool);
    }
    for inst in &mut instances {
        inst.tools = pools.pools[&inst.dataset_name].names();
    }
    let stats = make_stats(Formulation::Rest, corpus_size, dialect_discards, BTreeMap::new(), &verification, &instances, &pools);
    BuildOutput { formulation: Formulation::Rest, instances, pools, verification, stats }
}

fn make_stats(
    formulation: Formulation,
    corpus_size: usize,
    dialect_discards: &BTreeMap<String, usize>,
    formulation_discards: BTreeMap<String, usize>,
    verification: &[VerificationRecord],
    instances: &[EvalInstance],
    pools: &PoolSet,
) -> BuildStats {
    let mut per_db: BTreeMap<String, DbStats> = BTreeMap::new();
    for (db, p) in &pools.pools {
        per_db.entry(db.clone()).or_default().tools = p.len();
    }
    for i in instances {
        per_db.entry(i.dataset_name.clone()).or_default().retained += 1;
    }
    BuildStats {
        formulation,
        corpus_size,
        dialect_discards: dialect_discards.clone(),
        formulation_discards,
        verification_discards: verification.iter().filter(|r| !r.matched).count(),
        retained: instances.len(),
        tool_count: pools.pools.values().map(ToolPool::len).sum(),
        avg_calls_per_query: if instances.is_empty() {
            0.0
        } else {
            instances.iter().map(|i| i.output.len()).sum::<usize>() as f64 / instances.len() as f64
        },
        per_db,
    }
}

/// Writes `dataset.jsonl`, `pool.json`, `verification.jsonl`, `stats.json`.
pub fn write_output(out: &BuildOutput, dir: &Path) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir)?;
    let jsonl = |items: Vec<String>| items.into_iter().map(|l| l + "\n").collect::<String>();
    let rows = out.instances.iter().map(|i| serde_json::to_string(i).expect("row serializes")).collect();
    std::fs::write(dir.join("dataset.jsonl"), jsonl(rows))?;
    std::fs::write(dir.join("pool.json"), out.pools.to_json())?;
    let recs = out.verification.iter().map(|r| serde_json::to_string(r).expect("record serializes")).collect();
    std::fs::write(dir.join("verification.jsonl"), jsonl(recs))?;
    std::fs::write(dir.join("stats.json"), serde_json::to_string_pretty(&out.stats).expect("stats serialize"))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<EvalInstance>, DatasetError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| DatasetError::Corpus { line: i + 1, source }))
        .collect()
}

pub fn read_pool(path: &Path) -> Result<PoolSet, DatasetError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|source| DatasetError::Corpus { line: 0, source })
}

/// Argument map helper for callers building calls by hand.
pub fn object(v: Value) -> Map<String, Value> {
    v.as_object().cloned().unwrap_or_default()
}

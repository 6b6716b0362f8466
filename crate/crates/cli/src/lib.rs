//! The `apibench` command line.
//!
//! Every option can come from a flag, an `APIBENCH_*` environment variable, or
//! the TOML file named by `--config`, in that order of precedence. File keys
//! are the long flag names; a `[build]`, `[serve]` or `[eval]` table overrides
//! top-level keys for that subcommand.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use apibench_core::agent::{
    classify_trace, episode_completion, episode_prediction, run_episode, AgentConfig, AgentContext, AgentSummary,
    HttpChatClient, ModelClient, ModelClientConfig, ScriptedClient,
};
use apibench_core::dataset::{self, BuildOutput, EvalInstance};
use apibench_core::endpoint::{HttpRest, LocalRest};
use apibench_core::eval::{evaluate, score_calls, InstanceScore, MetricsReport, PredictionRecord, Scorer};
use apibench_core::pool::{Formulation, PoolSet};
use apibench_core::runtime::RestBackend;
use apibench_core::spec::{emit_pool_set, obfuscate_pool, shortlist_tools, ObfuscationMap};
use apibench_core::db;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "apibench", version, about = "Build, serve and score tool-calling benchmarks compiled from SQL")]
pub struct Cli {
    /// TOML file with defaults for any flag.
    #[arg(long, env = "APIBENCH_CONFIG", global = true)]
    pub config: Option<PathBuf>,
    /// Log level for stderr (error, warn, info, debug, trace).
    #[arg(long, env = "APIBENCH_LOG", global = true)]
    pub log: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Write the bundled sample databases.
    InitDb(InitDbArgs),
    /// Compile a SQL corpus into verified datasets, pools and specs.
    Build(BuildArgs),
    /// Serve a REST pool over HTTP until interrupted.
    Serve(ServeArgs),
    /// Score predictions, a gold replay, or an agent run.
    Eval(EvalArgs),
    /// Tabulate one or more report files.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct InitDbArgs {
    #[arg(long, env = "APIBENCH_DB_ROOT")]
    pub db_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Directory holding `<db>.sqlite` files.
    #[arg(long, env = "APIBENCH_DB_ROOT")]
    pub db_root: Option<PathBuf>,
    /// Corpus JSONL. Without it the bundled corpus and databases are used.
    #[arg(long, env = "APIBENCH_CORPUS")]
    pub corpus: Option<PathBuf>,
    /// Output directory; one subdirectory per formulation.
    #[arg(long, env = "APIBENCH_OUT")]
    pub out: Option<PathBuf>,
    /// slot, sel, rest or all.
    #[arg(long, env = "APIBENCH_FORMULATION")]
    pub formulation: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "APIBENCH_DB_ROOT")]
    pub db_root: Option<PathBuf>,
    /// A REST `pool.json` written by `build`.
    #[arg(long, env = "APIBENCH_POOL")]
    pub pool: Option<PathBuf>,
    /// Default 127.0.0.1:8000.
    #[arg(long, env = "APIBENCH_BIND")]
    pub bind: Option<SocketAddr>,
    /// Per-request timeout; default 10000.
    #[arg(long, env = "APIBENCH_TIMEOUT_MS")]
    pub timeout_ms: Option<u64>,
    /// Requests executing at once; default 64.
    #[arg(long, env = "APIBENCH_MAX_CONCURRENT")]
    pub max_concurrent: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// A formulation directory written by `build`.
    #[arg(long, env = "APIBENCH_DATASET")]
    pub dataset: Option<PathBuf>,
    #[arg(long, env = "APIBENCH_DB_ROOT")]
    pub db_root: Option<PathBuf>,
    /// Where report.json and instances.csv go.
    #[arg(long, env = "APIBENCH_OUT")]
    pub out: Option<PathBuf>,
    /// JSONL of {"sample_id", "text"} or {"sample_id", "calls"}.
    #[arg(long, env = "APIBENCH_PREDICTIONS")]
    pub predictions: Option<PathBuf>,
    /// Score the gold sequences themselves.
    #[arg(long, env = "APIBENCH_REPLAY_GOLD")]
    pub replay_gold: bool,
    /// Run the ReAct agent: `scripted` replays gold, `http` calls a model.
    #[arg(long, env = "APIBENCH_AGENT")]
    pub agent: Option<String>,
    #[arg(long, env = "APIBENCH_MODEL_ENDPOINT")]
    pub model_endpoint: Option<String>,
    #[arg(long, env = "APIBENCH_MODEL")]
    pub model: Option<String>,
    /// Seconds; default 60.
    #[arg(long, env = "APIBENCH_MODEL_TIMEOUT")]
    pub model_timeout: Option<u64>,
    /// Default 2.
    #[arg(long, env = "APIBENCH_MODEL_RETRIES")]
    pub model_retries: Option<u32>,
    /// Name of the variable holding the model bearer token; default APIBENCH_MODEL_TOKEN.
    #[arg(long, env = "APIBENCH_TOKEN_ENV")]
    pub token_env: Option<String>,
    /// Agent turn budget; default 10.
    #[arg(long, env = "APIBENCH_BUDGET")]
    pub budget: Option<usize>,
    /// Observation byte limit; default 4096.
    #[arg(long, env = "APIBENCH_OBSERVATION_LIMIT")]
    pub observation_limit: Option<usize>,
    /// Prompt template file with the five placeholders.
    #[arg(long, env = "APIBENCH_TEMPLATE")]
    pub template: Option<PathBuf>,
    /// Rename tools and arguments to FUNC_n / ARG_k.
    #[arg(long, env = "APIBENCH_OBFUSCATE")]
    pub obfuscate: bool,
    /// Offer each instance only this fraction of its tools, gold always kept.
    #[arg(long, env = "APIBENCH_SHORTLIST")]
    pub shortlist: Option<f64>,
    /// Default 0.
    #[arg(long, env = "APIBENCH_SEED")]
    pub seed: Option<u64>,
    /// Worker threads; default the number of processors.
    #[arg(long, env = "APIBENCH_PARALLELISM")]
    pub parallelism: Option<usize>,
    /// Base URL of a running `serve`; REST calls run in-process without it.
    #[arg(long, env = "APIBENCH_REST_URL")]
    pub rest_url: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// report.json files.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long, env = "APIBENCH_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    pub code: i32,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> CliError {
        CliError { kind, message: message.into(), code: 1 }
    }

    /// `error: kind=<kind> message=<json string>`
    pub fn line(&self) -> String {
        format!("error: kind={} message={}", self.kind, json!(self.message))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::new("io", format!("{}: {e}", path.display()))
}

/// Values from the config file.
#[derive(Debug, Default)]
pub struct FileConfig {
    table: toml::Table,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = std::fs::read_to_string(path).map_err(io(path))?;
        let table = text.parse::<toml::Table>().map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))?;
        Ok(FileConfig { table })
    }

    fn raw(&self, section: &str, key: &str) -> Option<&toml::Value> {
        self.table.get(section).and_then(|s| s.get(key)).or_else(|| self.table.get(key).filter(|v| !v.is_table()))
    }

    /// Fills `flag` from the file when neither the flag nor its variable was set.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, section: &str, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        let Some(v) = self.raw(section, key) else { return Ok(None) };
        let text = match v {
            toml::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        text.parse::<T>().map(Some).map_err(|e| CliError::new("config", format!("{section}.{key} = {text}: {e}")))
    }

    pub fn flag(&self, flag: bool, section: &str, key: &str) -> Result<bool, CliError> {
        Ok(flag || self.pick::<bool>(None, section, key)?.unwrap_or(false))
    }
}

fn required<T>(v: Option<T>, name: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::new("config", format!("--{name} is required")))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::InitDb(a) => init_db(&file, a),
        Command::Build(a) => cmd_build(&file, a).map(|_| ()),
        Command::Serve(a) => cmd_serve(&file, a),
        Command::Eval(a) => cmd_eval(&file, a).map(|_| ()),
        Command::Report(a) => cmd_report(a),
    }
}

fn init_db(file: &FileConfig, a: InitDbArgs) -> Result<(), CliError> {
    let root = required(file.pick(a.db_root, "init-db", "db-root")?, "db-root")?;
    let written = db::materialize_bundled(&root).map_err(|e| CliError::new("database", e.to_string()))?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn formulations(text: Option<&str>) -> Result<Vec<Formulation>, CliError> {
    match text {
        None | Some("all") => Ok(Formulation::ALL.to_vec()),
        Some(t) => t
            .split(',')
            .map(|s| Formulation::parse(s.trim()).ok_or_else(|| CliError::new("config", format!("unknown formulation `{s}`"))))
            .collect(),
    }
}

/// One line per formulation, e.g. `slot retained=60 discarded=3 ...`.
pub fn stats_line(out: &BuildOutput) -> String {
    let s = &out.stats;
    let mut reasons: BTreeMap<&str, usize> = BTreeMap::new();
    for (k, v) in s.dialect_discards.iter().chain(&s.formulation_discards) {
        *reasons.entry(k).or_default() += v;
    }
    if s.verification_discards > 0 {
        reasons.insert("VerificationMismatch", s.verification_discards);
    }
    let discarded = s.corpus_size - s.retained;
    let mut line = format!(
        "{} retained={} discarded={} tools={} avg_calls_per_query={:.2}",
        out.formulation, s.retained, discarded, s.tool_count, s.avg_calls_per_query
    );
    for (k, v) in reasons {
        line.push_str(&format!(" {k}={v}"));
    }
    line
}

pub fn cmd_build(file: &FileConfig, a: BuildArgs) -> Result<Vec<BuildOutput>, CliError> {
    let root = required(file.pick(a.db_root, "build", "db-root")?, "db-root")?;
    let out_dir = required(file.pick(a.out, "build", "out")?, "out")?;
    let corpus_path: Option<PathBuf> = file.pick(a.corpus, "build", "corpus")?;
    let wanted = formulations(file.pick::<String>(a.formulation, "build", "formulation")?.as_deref())?;
    let corpus = match &corpus_path {
        Some(p) => dataset::load_corpus(p).map_err(|e| CliError::new("corpus", format!("{}: {e}", p.display())))?,
        None => {
            db::materialize_bundled(&root).map_err(|e| CliError::new("database", e.to_string()))?;
            dataset::parse_corpus(db::BUNDLED_CORPUS).map_err(|e| CliError::new("corpus", e.to_string()))?
        }
    };
    let outputs: Vec<BuildOutput> = dataset::build(&corpus, &root)
        .map_err(|e| CliError::new("build", e.to_string()))?
        .into_iter()
        .filter(|o| wanted.contains(&o.formulation))
        .collect();
    let mut empty = Vec::new();
    for o in &outputs {
        let dir = out_dir.join(o.formulation.name());
        dataset::write_output(o, &dir).map_err(|e| CliError::new("io", e.to_string()))?;
        let spec = serde_json::to_string_pretty(&emit_pool_set(&o.pools.pools)).expect("spec serializes");
        std::fs::write(dir.join("spec.json"), spec).map_err(io(&dir))?;
        println!("{}", stats_line(o));
        if o.stats.retained == 0 {
            empty.push(o.formulation.name());
        }
    }
    if !empty.is_empty() {
        return Err(CliError::new("build", format!("no instances retained for {}", empty.join(", "))));
    }
    Ok(outputs)
}

pub fn cmd_serve(file: &FileConfig, a: ServeArgs) -> Result<(), CliError> {
    let config = apibench_server::ServiceConfig {
        bind: file.pick(a.bind, "serve", "bind")?.unwrap_or_else(|| "127.0.0.1:8000".parse().unwrap()),
        db_root: required(file.pick(a.db_root, "serve", "db-root")?, "db-root")?,
        pool_path: required(file.pick(a.pool, "serve", "pool")?, "pool")?,
        timeout: Duration::from_millis(file.pick(a.timeout_ms, "serve", "timeout-ms")?.unwrap_or(10_000)),
        max_concurrent: file.pick(a.max_concurrent, "serve", "max-concurrent")?.unwrap_or(64),
    };
    apibench_server::serve(&config).map_err(|e| CliError::new("serve", e.to_string()))
}

enum Mode {
    Predictions(PathBuf),
    Gold,
    Agent(String),
}

impl Mode {
    fn name(&self) -> &str {
        match self {
            Mode::Predictions(_) => "predictions",
            Mode::Gold => "replay-gold",
            Mode::Agent(k) => k,
        }
    }
}

/// Problems in a predictions file, one per offending line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaIssue {
    pub line: usize,
    pub message: String,
}

pub fn read_predictions(text: &str, known: &[usize]) -> (HashMap<usize, String>, Vec<SchemaIssue>) {
    let mut out = HashMap::new();
    let mut issues = Vec::new();
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        match serde_json::from_str::<PredictionRecord>(l) {
            Err(e) => issues.push(SchemaIssue { line, message: e.to_string() }),
            Ok(r) if !known.contains(&r.sample_id) => {
                issues.push(SchemaIssue { line, message: format!("unknown sample_id {}", r.sample_id) })
            }
            Ok(r) if out.contains_key(&r.sample_id) => {
                issues.push(SchemaIssue { line, message: format!("duplicate sample_id {}", r.sample_id) })
            }
            Ok(r) => {
                out.insert(r.sample_id, r.raw());
            }
        }
    }
    (out, issues)
}

fn apply_obfuscation(pools: &mut PoolSet, instances: &mut [EvalInstance], seed: u64) -> BTreeMap<String, ObfuscationMap> {
    let mut maps = BTreeMap::new();
    for (db, pool) in pools.pools.iter_mut() {
        let (ob, map) = obfuscate_pool(pool, seed);
        *pool = ob;
        maps.insert(db.clone(), map);
    }
    for inst in instances {
        if let Some(map) = maps.get(&inst.dataset_name) {
            inst.output = map.rename_calls(&inst.output);
            inst.tools = map.rename_tools(&inst.tools);
        }
    }
    maps
}

fn apply_shortlist(instances: &mut [EvalInstance], fraction: f64, seed: u64) -> Result<Vec<Value>, CliError> {
    let mut records = Vec::new();
    for inst in instances {
        let gold: Vec<String> = inst.output.iter().map(|c| c.name.clone()).collect();
        let s = shortlist_tools(&inst.tools, &gold, fraction, seed, inst.sample_id)
            .map_err(|e| CliError::new("config", format!("shortlist for sample {}: {e}", inst.sample_id)))?;
        inst.tools = s.tools.clone();
        records.push(serde_json::to_value(&s).expect("shortlist serializes"));
    }
    Ok(records)
}

fn write_jsonl(path: &Path, rows: impl IntoIterator<Item = String>) -> Result<(), CliError> {
    let text: String = rows.into_iter().map(|r| r + "\n").collect();
    std::fs::write(path, text).map_err(io(path))
}

/// Runs an evaluation and writes its artifacts; returns the report.
pub fn cmd_eval(file: &FileConfig, a: EvalArgs) -> Result<MetricsReport, CliError> {
    const S: &str = "eval";
    let dir = required(file.pick(a.dataset, S, "dataset")?, "dataset")?;
    let root = required(file.pick(a.db_root, S, "db-root")?, "db-root")?;
    let out = required(file.pick(a.out, S, "out")?, "out")?;
    let predictions: Option<PathBuf> = file.pick(a.predictions, S, "predictions")?;
    let replay_gold = file.flag(a.replay_gold, S, "replay-gold")?;
    let agent: Option<String> = file.pick(a.agent, S, "agent")?;
    let obfuscate = file.flag(a.obfuscate, S, "obfuscate")?;
    let shortlist: Option<f64> = file.pick(a.shortlist, S, "shortlist")?;
    let seed = file.pick(a.seed, S, "seed")?.unwrap_or(0);
    let threads = file
        .pick(a.parallelism, S, "parallelism")?
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let rest_url: Option<String> = file.pick(a.rest_url, S, "rest-url")?;

    let mode = match (predictions, replay_gold, agent) {
        (Some(p), false, None) => Mode::Predictions(p),
        (None, true, None) => Mode::Gold,
        (None, false, Some(k)) if k == "scripted" || k == "http" => Mode::Agent(k),
        (None, false, Some(k)) => return Err(CliError::new("config", format!("unknown agent `{k}`; use scripted or http"))),
        _ => return Err(CliError::new("config", "choose exactly one of --predictions, --replay-gold, --agent")),
    };

    let dataset_path = dir.join("dataset.jsonl");
    let pool_path = dir.join("pool.json");
    let mut instances =
        dataset::read_dataset(&dataset_path).map_err(|e| CliError::new("dataset", format!("{}: {e}", dataset_path.display())))?;
    let mut pools =
        dataset::read_pool(&pool_path).map_err(|e| CliError::new("pool", format!("{}: {e}", pool_path.display())))?;
    std::fs::create_dir_all(&out).map_err(io(&out))?;

    let mut settings = serde_json::Map::new();
    settings.insert("mode".into(), json!(mode.name()));
    settings.insert("seed".into(), json!(seed));
    settings.insert("obfuscate".into(), json!(obfuscate));
    settings.insert("shortlist".into(), json!(shortlist));

    if obfuscate {
        let maps = apply_obfuscation(&mut pools, &mut instances, seed);
        let text = serde_json::to_string_pretty(&maps).expect("maps serialize");
        std::fs::write(out.join("obfuscation.json"), text).map_err(io(&out))?;
    }
    if let Some(f) = shortlist {
        let records = apply_shortlist(&mut instances, f, seed)?;
        write_jsonl(&out.join("shortlists.jsonl"), records.iter().map(Value::to_string))?;
    }

    let rest: Option<Arc<dyn RestBackend>> = match (&rest_url, pools.formulation) {
        (Some(url), _) => Some(Arc::new(HttpRest::new(url, Duration::from_secs(30)).map_err(|e| CliError::new("rest", e))?)),
        (None, Formulation::Rest) => Some(Arc::new(LocalRest::new(&root))),
        (None, _) => None,
    };
    let scorer = Scorer { db_root: &root, pools: &pools, rest: rest.clone() };

    let mut issues = Vec::new();
    let mut agent_summary = None;
    let scores: Vec<InstanceScore> = match &mode {
        Mode::Predictions(p) => {
            let text = std::fs::read_to_string(p).map_err(io(p))?;
            let known: Vec<usize> = instances.iter().map(|i| i.sample_id).collect();
            let (preds, found) = read_predictions(&text, &known);
            for i in &found {
                eprintln!("warning: kind=schema line={} message={}", i.line, json!(i.message));
            }
            issues = found;
            evaluate(&scorer, &instances, &preds, threads)
        }
        Mode::Gold => {
            let preds = instances.iter().map(|i| (i.sample_id, serde_json::to_string(&i.output).expect("calls serialize"))).collect();
            evaluate(&scorer, &instances, &preds, threads)
        }
        Mode::Agent(kind) => {
            let config = AgentConfig {
                budget: file.pick(a.budget, S, "budget")?.unwrap_or(apibench_core::agent::DEFAULT_BUDGET),
                observation_limit: file
                    .pick(a.observation_limit, S, "observation-limit")?
                    .unwrap_or(apibench_core::agent::DEFAULT_OBSERVATION_LIMIT),
                template: match file.pick::<PathBuf>(a.template, S, "template")? {
                    Some(p) => std::fs::read_to_string(&p).map_err(io(&p))?,
                    None => apibench_core::agent::DEFAULT_TEMPLATE.to_string(),
                },
            };
            settings.insert("budget".into(), json!(config.budget));
            let http: Option<HttpChatClient> = if kind == "http" {
                let cfg = ModelClientConfig {
                    endpoint: required(file.pick(a.model_endpoint, S, "model-endpoint")?, "model-endpoint")?,
                    model: required(file.pick(a.model, S, "model")?, "model")?,
                    timeout_secs: file.pick(a.model_timeout, S, "model-timeout")?.unwrap_or(60),
                    retries: file.pick(a.model_retries, S, "model-retries")?.unwrap_or(2),
                    token_env: Some(file.pick(a.token_env, S, "token-env")?.unwrap_or_else(|| "APIBENCH_MODEL_TOKEN".into())),
                };
                settings.insert("model".into(), json!(cfg.model));
                Some(HttpChatClient::new(cfg).map_err(|e| CliError::new("model", e.to_string()))?)
            } else {
                None
            };
            let ctx = AgentContext { db_root: &root, rest: rest.clone(), config: &config };
            let run_one = |inst: &EvalInstance| {
                let pool = scorer.pool(inst).map_err(|e| CliError::new("pool", e))?;
                let scripted;
                let client: &dyn ModelClient = match &http {
                    Some(c) => c,
                    None => {
                        scripted = ScriptedClient::replaying(&inst.output, &inst.gold_answer.to_string());
                        &scripted
                    }
                };
                let ep = run_episode(&ctx, inst, pool, client);
                let completion = episode_completion(&ep, &inst.gold_answer);
                let flags = classify_trace(&ep, completion.completed);
                let done = completion.completed;
                let score = score_calls(&scorer, inst, &episode_prediction(&ep), Some(completion));
                Ok((ep, flags, done, score))
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.max(1))
                .build()
                .map_err(|e| CliError::new("runtime", e.to_string()))?;
            let results: Vec<_> = pool.install(|| instances.par_iter().map(run_one).collect::<Result<Vec<_>, CliError>>())?;
            write_jsonl(&out.join("traces.jsonl"), results.iter().map(|(ep, ..)| serde_json::to_string(ep).expect("episode serializes")))?;
            let flags: Vec<_> = results.iter().map(|(_, f, d, _)| (*f, *d)).collect();
            agent_summary = Some(serde_json::to_value(AgentSummary::from_flags(&flags)).expect("summary serializes"));
            results.into_iter().map(|(.., s)| s).collect()
        }
    };

    let mut report = MetricsReport::from_scores(pools.formulation, &pools.content_hash(), scores);
    report.settings = settings;
    report.agent = agent_summary;
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    std::fs::write(out.join("report.json"), text).map_err(io(&out))?;
    let csv_path = out.join("instances.csv");
    let csv = std::fs::File::create(&csv_path).map_err(io(&csv_path))?;
    report.write_csv(csv).map_err(|e| CliError::new("io", e.to_string()))?;
    println!("{}", summary_line(&report));
    if !issues.is_empty() {
        return Err(CliError::new("schema", format!("{} malformed prediction lines", issues.len())));
    }
    Ok(report)
}

pub fn summary_line(r: &MetricsReport) -> String {
    let mut line = format!(
        "{} instances={} intent_f1={:.4} slot_f1={:.4} completion={:.4}",
        r.formulation, r.instances, r.intent.f1, r.slot.f1, r.completion_rate
    );
    if let Some(a) = &r.agent {
        line.push_str(&format!(" avg_loops={:.2} oob={} stuck={}", a["avg_loops"].as_f64().unwrap_or(0.0), a["oob"], a["stuck"]));
    }
    line
}

const REPORT_COLUMNS: [&str; 13] = [
    "formulation",
    "mode",
    "instances",
    "intent_p",
    "intent_r",
    "intent_f1",
    "slot_p",
    "slot_r",
    "slot_f1",
    "completion",
    "avg_loops",
    "oob",
    "pool_hash",
];

pub fn report_rows(reports: &[MetricsReport]) -> Vec<Vec<String>> {
    reports
        .iter()
        .map(|r| {
            let agent = |k: &str| {
                r.agent
                    .as_ref()
                    .map(|a| match &a[k] {
                        Value::Number(n) if n.is_f64() => format!("{:.2}", n.as_f64().unwrap_or(0.0)),
                        v => v.to_string(),
                    })
                    .unwrap_or_default()
            };
            vec![
                r.formulation.to_string(),
                r.settings.get("mode").and_then(Value::as_str).unwrap_or("").to_string(),
                r.instances.to_string(),
                format!("{:.4}", r.intent.precision),
                format!("{:.4}", r.intent.recall),
                format!("{:.4}", r.intent.f1),
                format!("{:.4}", r.slot.precision),
                format!("{:.4}", r.slot.recall),
                format!("{:.4}", r.slot.f1),
                format!("{:.4}", r.completion_rate),
                agent("avg_loops"),
                agent("oob"),
                r.pool_hash.chars().take(12).collect(),
            ]
        })
        .collect()
}

pub fn cmd_report(a: ReportArgs) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for p in &a.reports {
        let text = std::fs::read_to_string(p).map_err(io(p))?;
        let r: MetricsReport =
            serde_json::from_str(&text).map_err(|e| CliError::new("report", format!("{}: {e}", p.display())))?;
        reports.push(r);
    }
    let rows = report_rows(&reports);
    let widths: Vec<usize> = (0..REPORT_COLUMNS.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([REPORT_COLUMNS[c].len()]).max().unwrap_or(0))
        .collect();
    let fmt_row = |cells: Vec<&str>| cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ");
    println!("{}", fmt_row(REPORT_COLUMNS.to_vec()).trim_end());
    for r in &rows {
        println!("{}", fmt_row(r.iter().map(String::as_str).collect()).trim_end());
    }
    if let Some(out) = &a.out {
        let mut text = REPORT_COLUMNS.join(",") + "\n";
        for r in &rows {
            text.push_str(&(r.join(",") + "\n"));
        }
        std::fs::write(out, text).map_err(io(out))?;
    }
    Ok(())
}

//! Scoring predictions against gold sequences.

pub mod align;
pub mod parse;

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::EvalInstance;
use crate::normalize::answers_match;
use crate::pool::{Formulation, PoolSet, ToolPool};
use crate::runtime::{execute_sequence, LabelEnv, RestBackend, ToolCall};

pub use align::{align_names, align_sequences, intent_metrics, slot_metrics, AlignmentResult, Prf, SlotCounts};
pub use parse::{parse_model_output, ParseStage, ParsedPrediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    InstructionAlignmentFailure,
    WrongFuncCount,
    WrongFuncFormat,
    HallucinatedFuncName,
    WrongFuncName,
    MissingRequiredParameter,
    UnexpectedParam,
    ValueError,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 8] = [
        ErrorCategory::InstructionAlignmentFailure,
        ErrorCategory::WrongFuncCount,
        ErrorCategory::WrongFuncFormat,
        ErrorCategory::HallucinatedFuncName,
        ErrorCategory::WrongFuncName,
        ErrorCategory::MissingRequiredParameter,
        ErrorCategory::UnexpectedParam,
        ErrorCategory::ValueError,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ErrorCategory::InstructionAlignmentFailure => "instruction_alignment_failure",
            ErrorCategory::WrongFuncCount => "wrong_func_count",
            ErrorCategory::WrongFuncFormat => "wrong_func_format",
            ErrorCategory::HallucinatedFuncName => "hallucinated_func_name",
            ErrorCategory::WrongFuncName => "wrong_func_name",
            ErrorCategory::MissingRequiredParameter => "missing_required_parameter",
            ErrorCategory::UnexpectedParam => "unexpected_param",
            ErrorCategory::ValueError => "value_error",
        }
    }
}

/// First failing check in precedence order. Only meaningful for instances
/// that failed completion; always returns exactly one category.
pub fn classify_error(gold: &[ToolCall], offered: &[String], pool: &ToolPool, p: &ParsedPrediction) -> ErrorCategory {
    if p.parse_stage == ParseStage::Failed {
        return ErrorCategory::InstructionAlignmentFailure;
    }
    if p.item_count != gold.len() {
        return ErrorCategory::WrongFuncCount;
    }
    if p.format_error.is_some() {
        return ErrorCategory::WrongFuncFormat;
    }
    let offered: HashSet<&str> = offered.iter().map(String::as_str).collect();
    if p.calls.iter().any(|c| !offered.contains(c.name.as_str()) || pool.get(&c.name).is_none()) {
        return ErrorCategory::HallucinatedFuncName;
    }
    if p.calls.iter().zip(gold).any(|(a, b)| a.name != b.name) {
        return ErrorCategory::WrongFuncName;
    }
    let specs: Vec<_> = p.calls.iter().map(|c| &pool.get(&c.name).unwrap().spec).collect();
    if p.calls.iter().zip(&specs).any(|(c, s)| s.required.iter().any(|r| !c.arguments.contains_key(r))) {
        return ErrorCategory::MissingRequiredParameter;
    }
    if p.calls.iter().zip(&specs).any(|(c, s)| c.arguments.keys().any(|k| !s.parameters.contains_key(k))) {
        return ErrorCategory::UnexpectedParam;
    }
    ErrorCategory::ValueError
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub completed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
}

impl Completion {
    fn failed(cause: impl Into<String>) -> Completion {
        Completion { completed: false, answer: None, cause: Some(cause.into()) }
    }
}

/// Everything needed to execute predictions.
#[derive(Clone)]
pub struct Scorer<'a> {
    pub db_root: &'a Path,
    pub pools: &'a PoolSet,
    pub rest: Option<Arc<dyn RestBackend>>,
}

impl Scorer<'_> {
    pub fn pool(&self, inst: &EvalInstance) -> Result<&ToolPool, String> {
        self.pools.pool(&inst.dataset_name).ok_or_else(|| format!("no tool pool for `{}`", inst.dataset_name))
    }

    /// Runs `calls` after the instance's initialization step and compares
    /// the answer with the gold answer.
    pub fn completion_check(&self, inst: &EvalInstance, calls: &[ToolCall]) -> Completion {
        if calls.is_empty() {
            return Completion::failed("empty prediction");
        }
        if let Some(c) = calls.iter().find(|c| !inst.tools.contains(&c.name)) {
            return Completion::failed(format!("tool `{}` was not offered", c.name));
        }
        let pool = match self.pool(inst) {
            Ok(p) => p,
            Err(e) => return Completion::failed(e),
        };
        let mut env = match LabelEnv::new(self.db_root) {
            Ok(e) => e,
            Err(e) => return Completion::failed(e.to_string()),
        };
        if let Some(r) = &self.rest {
            env = env.with_rest(r.clone());
        }
        if let Some(init) = &inst.initialization_step {
            if let Err(e) = env.initialize(init) {
                return Completion::failed(format!("initialization: {e}"));
            }
        }
        match execute_sequence(calls, &mut env, pool).result {
            Ok(answer) => {
                let completed = answers_match(&answer, &inst.gold_answer);
                Completion { completed, cause: (!completed).then(|| "answer mismatch".to_string()), answer: Some(answer) }
            }
            Err(e) => Completion::failed(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub sample_id: usize,
    pub dataset_name: String,
    pub parse_stage: ParseStage,
    pub n_pred: usize,
    pub n_gold: usize,
    pub pairs: usize,
    pub intent_precision: f64,
    pub intent_recall: f64,
    pub intent_f1: f64,
    pub slot_hits: usize,
    pub slot_predicted: usize,
    pub slot_expected: usize,
    pub slot_precision: f64,
    pub slot_recall: f64,
    pub slot_f1: f64,
    pub slot_zero_pair: bool,
    pub completed: bool,
    pub error_category: Option<ErrorCategory>,
    pub failure_cause: Option<String>,
}

/// Scores already-parsed calls. `completion` may come from elsewhere (an
/// agent episode); otherwise the calls are executed.
pub fn score_calls(
    scorer: &Scorer,
    inst: &EvalInstance,
    parsed: &ParsedPrediction,
    completion: Option<Completion>,
) -> InstanceScore {
    let a = align_sequences(&parsed.calls, &inst.output);
    let intent = intent_metrics(&a, parsed.calls.len(), inst.output.len());
    let slots = slot_metrics(&a, &parsed.calls, &inst.output);
    let slot = slots.prf();
    let completion = completion.unwrap_or_else(|| scorer.completion_check(inst, &parsed.calls));
    let error_category = (!completion.completed).then(|| match scorer.pool(inst) {
        Ok(pool) => classify_error(&inst.output, &inst.tools, pool, parsed),
        Err(_) => ErrorCategory::ValueError,
    });
    InstanceScore {
        sample_id: inst.sample_id,
        dataset_name: inst.dataset_name.clone(),
        parse_stage: parsed.parse_stage,
        n_pred: parsed.calls.len(),
        n_gold: inst.output.len(),
        pairs: a.pairs.len(),
        intent_precision: intent.precision,
        intent_recall: intent.recall,
        intent_f1: intent.f1,
        slot_hits: slots.hits,
        slot_predicted: slots.predicted,
        slot_expected: slots.expected,
        slot_precision: slot.precision,
        slot_recall: slot.recall,
        slot_f1: slot.f1,
        slot_zero_pair: slots.zero_pair(),
        completed: completion.completed,
        error_category,
        failure_cause: completion.cause,
    }
}

pub fn score_text(scorer: &Scorer, inst: &EvalInstance, text: &str) -> InstanceScore {
    score_calls(scorer, inst, &parse_model_output(text), None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub formulation: Formulation,
    pub pool_hash: String,
    pub instances: usize,
    /// Mean of per-instance scores.
    pub intent: Prf,
    /// Counts pooled over all instances.
    pub intent_pooled: Prf,
    /// Mean over instances with at least one matched pair.
    pub slot: Prf,
    pub slot_pooled: Prf,
    pub slot_zero_pair_instances: usize,
    pub completion_rate: f64,
    pub errors: IndexMap<String, usize>,
    pub parse_stages: IndexMap<String, usize>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub settings: serde_json::Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<Value>,
    pub per_instance: Vec<InstanceScore>,
}

impl MetricsReport {
    pub fn from_scores(formulation: Formulation, pool_hash: &str, mut scores: Vec<InstanceScore>) -> MetricsReport {
        scores.sort_by_key(|s| s.sample_id);
        let n = scores.len();
        let intents: Vec<Prf> =
            scores.iter().map(|s| Prf { precision: s.intent_precision, recall: s.intent_recall, f1: s.intent_f1 }).collect();
        let slots: Vec<Prf> = scores
            .iter()
            .filter(|s| !s.slot_zero_pair)
            .map(|s| Prf { precision: s.slot_precision, recall: s.slot_recall, f1: s.slot_f1 })
            .collect();
        let sum = |f: fn(&InstanceScore) -> usize| scores.iter().map(f).sum::<usize>();
        let mut errors: IndexMap<String, usize> = ErrorCategory::ALL.iter().map(|c| (c.name().to_string(), 0)).collect();
        let mut parse_stages: IndexMap<String, usize> = ParseStage::ALL.iter().map(|c| (c.name().to_string(), 0)).collect();
        for s in &scores {
            if let Some(c) = s.error_category {
                errors[c.name()] += 1;
            }
            parse_stages[s.parse_stage.name()] += 1;
        }
        MetricsReport {
            formulation,
            pool_hash: pool_hash.to_string(),
            instances: n,
            intent: Prf::mean(&intents),
            intent_pooled: Prf::from_counts(sum(|s| s.pairs), sum(|s| s.n_pred), sum(|s| s.n_gold)),
            slot: Prf::mean(&slots),
            slot_pooled: SlotCounts {
                hits: sum(|s| s.slot_hits),
                predicted: sum(|s| s.slot_predicted),
                expected: sum(|s| s.slot_expected),
                pairs: sum(|s| s.pairs),
            }
            .prf(),
            slot_zero_pair_instances: n - slots.len(),
            completion_rate: if n == 0 { 0.0 } else { scores.iter().filter(|s| s.completed).count() as f64 / n as f64 },
            errors,
            parse_stages,
            settings: Default::default(),
            agent: None,
            per_instance: scores,
        }
    }

    pub fn write_csv(&self, w: impl Write) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        for s in &self.per_instance {
            out.serialize(CsvRow::from(s))?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    sample_id: usize,
    dataset_name: &'a str,
    parse_stage: &'static str,
    n_pred: usize,
    n_gold: usize,
    pairs: usize,
    intent_precision: f64,
    intent_recall: f64,
    intent_f1: f64,
    slot_precision: f64,
    slot_recall: f64,
    slot_f1: f64,
    slot_zero_pair: bool,
    completed: bool,
    error_category: &'static str,
    failure_cause: &'a str,
}

impl<'a> From<&'a InstanceScore> for CsvRow<'a> {
    fn from(s: &'a InstanceScore) -> Self {
        CsvRow {
            sample_id: s.sample_id,
            dataset_name: &s.dataset_name,
            parse_stage: s.parse_stage.name(),
            n_pred: s.n_pred,
            n_gold: s.n_gold,
            pairs: s.pairs,
            intent_precision: s.intent_precision,
            intent_recall: s.intent_recall,
            intent_f1: s.intent_f1,
            slot_precision: s.slot_precision,
            slot_recall: s.slot_recall,
            slot_f1: s.slot_f1,
            slot_zero_pair: s.slot_zero_pair,
            completed: s.completed,
            error_category: s.error_category.map(ErrorCategory::name).unwrap_or(""),
            failure_cause: s.failure_cause.as_deref().unwrap_or(""),
        }
    }
}

/// One predictions.jsonl row: raw text, or already-structured calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: usize,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub calls: Option<Value>,
}

impl PredictionRecord {
    pub fn raw(&self) -> String {
        match (&self.text, &self.calls) {
            (Some(t), _) => t.clone(),
            (None, Some(c)) => c.to_string(),
            (None, None) => String::new(),
        }
    }
}

/// Scores every instance in parallel; instances without a prediction score
/// as an empty output.
pub fn evaluate(
    scorer: &Scorer,
    instances: &[EvalInstance],
    predictions: &std::collections::HashMap<usize, String>,
    threads: usize,
) -> Vec<InstanceScore> {
    let run = || {
        instances
            .par_iter()
            .map(|inst| score_text(scorer, inst, predictions.get(&inst.sample_id).map(String::as_str).unwrap_or("")))
            .collect()
    };
    match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::{Builtin, Binding, ParamSpec, ToolSpec};
    use serde_json::json;

    fn pool() -> ToolPool {
        let mut p = ToolPool::new(Formulation::Slot, "db");
        let mut params = IndexMap::new();
        params.insert("data_source".to_string(), ParamSpec::new("string", "src"));
        params.insert("key_name".to_string(), ParamSpec::new("string", "key"));
        p.insert(
            ToolSpec {
                name: "retrieve_data".into(),
                description: "d".into(),
                parameters: params,
                required: vec!["data_source".into(), "key_name".into()],
                output_parameters: IndexMap::new(),
                path: None,
            },
            Binding::builtin(Builtin::RetrieveData),
        );
        p
    }

    fn gold() -> Vec<ToolCall> {
        vec![ToolCall::new("retrieve_data", json!({"data_source": "$starting_table_var$", "key_name": "t_a"}), None)]
    }

    fn classify(text: &str) -> ErrorCategory {
        classify_error(&gold(), &["retrieve_data".to_string()], &pool(), &parse_model_output(text))
    }

    #[test]
    fn precedence() {
        assert_eq!(classify("I think the answer is 4"), ErrorCategory::InstructionAlignmentFailure);
        assert_eq!(classify(r#"[{"name": "retrieve_data", "arguments": {}}, {"name": "x", "arguments": {}}]"#), ErrorCategory::WrongFuncCount);
        assert_eq!(classify(r#"["retrieve_data"]"#), ErrorCategory::WrongFuncFormat);
        assert_eq!(classify(r#"[{"name": "made_up", "arguments": {}}]"#), ErrorCategory::HallucinatedFuncName);
        assert_eq!(classify(r#"[{"name": "retrieve_data", "arguments": {"data_source": "$starting_table_var$"}}]"#), ErrorCategory::MissingRequiredParameter);
        assert_eq!(
            classify(r#"[{"name": "retrieve_data", "arguments": {"data_source": "x", "key_name": "t_a", "z": 1}}]"#),
            ErrorCategory::UnexpectedParam
        );
        assert_eq!(classify(r#"[{"name": "retrieve_data", "arguments": {"data_source": "x", "key_name": "t_b"}}]"#), ErrorCategory::ValueError);
    }

    #[test]
    fn report_aggregates() {
        let mk = |id, completed, zero| InstanceScore {
            sample_id: id,
            dataset_name: "db".into(),
            parse_stage: ParseStage::Json,
            n_pred: 1,
            n_gold: 2,
            pairs: if zero { 0 } else { 1 },
            intent_precision: if zero { 0.0 } else { 1.0 },
            intent_recall: if zero { 0.0 } else { 0.5 },
            intent_f1: if zero { 0.0 } else { 2.0 / 3.0 },
            slot_hits: if zero { 0 } else { 2 },
            slot_predicted: if zero { 0 } else { 2 },
            slot_expected: if zero { 0 } else { 2 },
            slot_precision: if zero { 0.0 } else { 1.0 },
            slot_recall: if zero { 0.0 } else { 1.0 },
            slot_f1: if zero { 0.0 } else { 1.0 },
            slot_zero_pair: zero,
            completed,
            error_category: (!completed).then_some(ErrorCategory::ValueError),
            failure_cause: None,
        };
        let r = MetricsReport::from_scores(Formulation::Slot, "h", vec![mk(2, false, true), mk(1, true, false)]);
        assert_eq!(r.per_instance[0].sample_id, 1);
        assert_eq!(r.completion_rate, 0.5);
        assert_eq!(r.slot.f1, 1.0);
        assert_eq!(r.slot_zero_pair_instances, 1);
        assert_eq!(r.intent_pooled.recall, 0.25);
        assert_eq!(r.errors["value_error"], 1);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}

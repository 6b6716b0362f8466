//! Think-Act-Observe agent loop over live tools.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::dataset::EvalInstance;
use crate::eval::parse::python_literal;
use crate::eval::{Completion, ParseStage, ParsedPrediction};
use crate::normalize::answers_match;
use crate::pool::ToolPool;
use crate::runtime::{effective_label, LabelEnv, RestBackend, ToolCall, ToolResult};
use crate::spec::emit_pool;

pub const DEFAULT_BUDGET: usize = 10;
pub const DEFAULT_OBSERVATION_LIMIT: usize = 4096;
const TRUNCATION_MARKER: &str = " ...[truncated]";

pub const DEFAULT_TEMPLATE: &str = r#"Answer the following questions as best you can.
You have access to the following tools:

{tools}

Respond to the query using the available APIs.

The format you use the API is by specifying
1) Action: the API function name you would like to call
2) Action Input: the input parameters of the API call in a json string format.
The result of the API call will be returned starting with "Observation:". Remember that you should only perform a SINGLE action at a time, do NOT return a list of multiple actions.

Reminder:
1) the only values that should follow "Action:" are: {tool_names}
2) use the following json string format for the API arguments:

Action Input:
{{
    "key_1": "value_1",
    ...
    "key_n": "value_n",
}}

Remember to ALWAYS use the following format:

Thought: you should always think about what to do next
Action: the API function name
Action Input: the input parameters of the API call in json string format
Observation: the return result of the API call. This is what I will provide you with; you do not need to repeat it in your response.
... (this Thought/Action/Action Input/Observation can repeat N times)
Thought: I now know the final answer
Final Answer: the response to the user query

Begin! Remember that your response should never start with "Observation:" since that is what I will provide you with.

Question: {input}

{previousruns}

Thought:{agent_scratchpad}"#;

pub struct PromptParts<'a> {
    pub tools: &'a str,
    pub tool_names: &'a str,
    pub input: &'a str,
    pub previousruns: &'a str,
    pub agent_scratchpad: &'a str,
}

/// Fills the five placeholders; `{{` and `}}` are literal braces.
pub fn render_template(template: &str, parts: &PromptParts) -> String {
    const OPEN: &str = "\u{0}LBRACE\u{0}";
    const CLOSE: &str = "\u{0}RBRACE\u{0}";
    template
        .replace("{{", OPEN)
        .replace("}}", CLOSE)
        .replace("{tools}", parts.tools)
        .replace("{tool_names}", parts.tool_names)
        .replace("{input}", parts.input)
        .replace("{previousruns}", parts.previousruns)
        .replace("{agent_scratchpad}", parts.agent_scratchpad)
        .replace(OPEN, "{")
        .replace(CLOSE, "}")
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("bad response: {0}")]
    BadResponse(String),
}

pub trait ModelClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, ClientError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelClientConfig {
    /// Chat-completions URL.
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    pub retries: u32,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_env: Option<String>,
}

/// OpenAI-style chat completions over HTTP.
pub struct HttpChatClient {
    config: ModelClientConfig,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(config: ModelClientConfig) -> Result<HttpChatClient, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(HttpChatClient { config, http })
    }

    fn once(&self, prompt: &str) -> Result<String, ClientError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
            "stop": ["Observation:"],
        });
        let mut req = self.http.post(&self.config.endpoint).json(&body);
        if let Some(token) = self.config.token_env.as_deref().and_then(|v| std::env::var(v).ok()) {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let v: Value = resp.json().map_err(|e| ClientError::BadResponse(e.to_string()))?;
        if !status.is_success() {
            return Err(ClientError::Transport(format!("{status}: {v}")));
        }
        v.pointer("/choices/0/message/content")
            .or_else(|| v.pointer("/choices/0/text"))
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ClientError::BadResponse(v.to_string()))
    }
}

impl ModelClient for HttpChatClient {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let mut last = None;
        for attempt in 0..=self.config.retries {
            match self.once(prompt) {
                Ok(t) => return Ok(t),
                Err(e) => {
                    tracing::warn!(attempt, error = %e, "model request failed");
                    last = Some(e);
                    if attempt < self.config.retries {
                        std::thread::sleep(Duration::from_millis(200 << attempt.min(5)));
                    }
                }
            }
        }
        Err(last.unwrap())
    }
}

/// Returns canned responses in order, repeating the last one.
pub struct ScriptedClient {
    responses: Mutex<VecDeque<String>>,
    last: Mutex<Option<String>>,
}

impl ScriptedClient {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> ScriptedClient {
        ScriptedClient {
            responses: Mutex::new(responses.into_iter().map(Into::into).collect()),
            last: Mutex::new(None),
        }
    }

    /// A script that replays `calls` as actions, then gives `answer`.
    pub fn replaying(calls: &[ToolCall], answer: &str) -> ScriptedClient {
        let mut turns: Vec<String> = calls
            .iter()
            .map(|c| {
                let mut input = c.arguments.clone();
                if let Some(l) = &c.label {
                    input.insert("label".into(), json!(l));
                }
                format!(" I should call {}.\nAction: {}\nAction Input: {}", c.name, c.name, Value::Object(input))
            })
            .collect();
        turns.push(format!(" I now know the final answer\nFinal Answer: {answer}"));
        ScriptedClient::new(turns)
    }
}

impl ModelClient for ScriptedClient {
    fn complete(&self, _prompt: &str) -> Result<String, ClientError> {
        let next = self.responses.lock().unwrap().pop_front();
        let mut last = self.last.lock().unwrap();
        match next {
            Some(t) => {
                *last = Some(t.clone());
                Ok(t)
            }
            None => last.clone().ok_or_else(|| ClientError::Transport("script is empty".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelTurn {
    Action { thought: String, action: String, input: Result<Map<String, Value>, String>, extra_actions: bool },
    Final { thought: String, answer: String },
    Malformed(String),
}

fn action_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^\s*Action\s*:[ \t]*(.*)$").unwrap())
}

fn trailing_comma() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r",(\s*[}\]])").unwrap())
}

fn parse_input(text: &str) -> Result<Map<String, Value>, String> {
    let t = text.trim().trim_start_matches("```json").trim_start_matches("```").trim_end_matches("```").trim();
    let body = match (t.find('{'), t.rfind('}')) {
        (Some(a), Some(b)) if b > a => &t[a..=b],
        _ if t.is_empty() => return Ok(Map::new()),
        _ => t,
    };
    let cleaned = trailing_comma().replace_all(body, "$1");
    serde_json::from_str::<Value>(&cleaned)
        .ok()
        .or_else(|| python_literal(&cleaned))
        .and_then(|v| v.as_object().cloned())
        .ok_or_else(|| format!("Action Input is not a json object: {}", body.trim()))
}

fn strip_thought(text: &str) -> String {
    let t = text.trim();
    t.strip_prefix("Thought:").unwrap_or(t).trim().to_string()
}

/// Reads the first Thought/Action/Action Input triple or a Final Answer.
pub fn parse_action(text: &str) -> ModelTurn {
    let t = text.trim_start();
    if t.starts_with("Observation:") {
        return ModelTurn::Malformed(
            "Your response should never start with \"Observation:\". Reply with Thought, Action and Action Input, or a Final Answer.".into(),
        );
    }
    let first_action = action_pattern().captures(t);
    let final_at = t.find("Final Answer:");
    let action_at = first_action.as_ref().map(|c| c.get(0).unwrap().start());
    if let Some(f) = final_at {
        if action_at.is_none_or(|a| f < a) {
            let answer = t[f + "Final Answer:".len()..].trim();
            let answer = answer.split("\nObservation:").next().unwrap_or(answer).trim().to_string();
            return ModelTurn::Final { thought: strip_thought(&t[..f]), answer };
        }
    }
    let Some(caps) = first_action else {
        return ModelTurn::Malformed("Could not find \"Action:\" or \"Final Answer:\" in your response. Use the required format.".into());
    };
    let whole = caps.get(0).unwrap();
    let action = caps[1].trim().trim_matches('`').trim().to_string();
    let rest = &t[whole.end()..];
    let extra_actions = action_pattern().find(rest).is_some();
    let input = match rest.find("Action Input:") {
        Some(i) => {
            let after = &rest[i + "Action Input:".len()..];
            let end = ["\nObservation:", "\nThought:", "\nAction:", "\nFinal Answer:"]
                .iter()
                .filter_map(|m| after.find(m))
                .min()
                .unwrap_or(after.len());
            parse_input(&after[..end])
        }
        None => Err("missing \"Action Input:\"".into()),
    };
    ModelTurn::Action { thought: strip_thought(&t[..whole.start()]), action, input, extra_actions }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Oob,
    Stuck,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub thought: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_input: Option<Value>,
    pub observation: String,
    /// Tool or format error on this turn.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub sample_id: usize,
    pub turns: Vec<Turn>,
    pub budget: usize,
    pub final_answer: Option<String>,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
    /// Every well-formed action, in order, as attempted.
    pub calls: Vec<ToolCall>,
    /// Result of the last successful action.
    pub last_result: Option<Value>,
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub budget: usize,
    pub observation_limit: usize,
    pub template: String,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            budget: DEFAULT_BUDGET,
            observation_limit: DEFAULT_OBSERVATION_LIMIT,
            template: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

pub fn truncate_observation(text: &str, limit: usize) -> String {
    if text.len() <= limit {
        return text.to_string();
    }
    let mut cut = limit.saturating_sub(TRUNCATION_MARKER.len());
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}{TRUNCATION_MARKER}", &text[..cut])
}

fn describe(env: &mut LabelEnv, label: &str, result: &ToolResult) -> (String, Option<Value>) {
    let value = env.result_json(result).ok();
    let body = value.as_ref().map(Value::to_string).unwrap_or_default();
    let text = match result {
        ToolResult::Table(h) => format!(
            "stored as ${label}$: table with {} rows and columns {}; rows: {body}",
            h.row_count,
            serde_json::to_string(&h.schema).unwrap_or_default()
        ),
        ToolResult::Values(_) => format!("stored as ${label}$: {body}"),
    };
    (text, value)
}

/// Executes one action; returns the observation and the result on success.
fn act(env: &mut LabelEnv, pool: &ToolPool, offered: &[String], call: &ToolCall, index: usize) -> Result<(String, Value), String> {
    if !offered.contains(&call.name) {
        return Err(format!("`{}` is not a valid tool, try one of [{}]", call.name, offered.join(", ")));
    }
    let entry = pool.get(&call.name).ok_or_else(|| format!("`{}` is not a valid tool", call.name))?;
    let label = effective_label(call, index);
    if env.get(&label).is_some() {
        return Err(format!("label `{label}` is already used; choose a new label"));
    }
    let result = env.invoke_entry(entry, &call.arguments).map_err(|e| format!("{}: {e}", e.kind()))?;
    env.bind(&label, result.clone()).map_err(|e| e.to_string())?;
    let (text, value) = describe(env, &label, &result);
    Ok((text, value.unwrap_or(Value::Null)))
}

pub struct AgentContext<'a> {
    pub db_root: &'a Path,
    pub rest: Option<Arc<dyn RestBackend>>,
    pub config: &'a AgentConfig,
}

/// Runs one episode. Tool errors become observations; only client failures
/// end the episode with `Outcome::Error`.
pub fn run_episode(ctx: &AgentContext, inst: &EvalInstance, pool: &ToolPool, client: &dyn ModelClient) -> Episode {
    let mut ep = Episode {
        sample_id: inst.sample_id,
        turns: Vec::new(),
        budget: ctx.config.budget,
        final_answer: None,
        outcome: Outcome::Oob,
        cause: None,
        calls: Vec::new(),
        last_result: None,
    };
    let mut env = match LabelEnv::new(ctx.db_root) {
        Ok(e) => e,
        Err(e) => return fail(ep, e.to_string()),
    };
    if let Some(r) = &ctx.rest {
        env = env.with_rest(r.clone());
    }
    if let Some(init) = &inst.initialization_step {
        if let Err(e) = env.initialize(init) {
            return fail(ep, format!("initialization: {e}"));
        }
    }
    let columns = (!inst.columns.is_empty()).then_some(inst.columns.as_slice());
    let tools = serde_json::to_string_pretty(&emit_pool(pool, Some(&inst.tools), columns)).unwrap_or_default();
    let tool_names = inst.tools.join(", ");
    let mut scratchpad = String::new();
    let mut executed = 0usize;
    while ep.turns.len() < ctx.config.budget {
        let prompt = render_template(
            &ctx.config.template,
            &PromptParts {
                tools: &tools,
                tool_names: &tool_names,
                input: &inst.input,
                previousruns: "",
                agent_scratchpad: &scratchpad,
            },
        );
        let text = match client.complete(&prompt) {
            Ok(t) => t,
            Err(e) => return fail(ep, e.to_string()),
        };
        let shown = text.split("\nObservation:").next().unwrap_or(&text).trim_end().to_string();
        let turn = match parse_action(&text) {
            ModelTurn::Final { thought, answer } => {
                ep.turns.push(Turn { thought, action: None, action_input: None, observation: String::new(), failed: false });
                ep.final_answer = Some(answer);
                ep.outcome = Outcome::Completed;
                return ep;
            }
            ModelTurn::Malformed(msg) => Turn { thought: text.trim().to_string(), action: None, action_input: None, observation: msg, failed: true },
            ModelTurn::Action { thought, action, input, extra_actions } => match input {
                Err(msg) => Turn { thought, action: Some(action), action_input: None, observation: msg, failed: true },
                Ok(mut args) => {
                    let label = match args.shift_remove("label") {
                        Some(Value::String(s)) => Some(s),
                        _ => None,
                    };
                    let call = ToolCall { name: action.clone(), arguments: args.clone(), label };
                    let outcome = act(&mut env, pool, &inst.tools, &call, executed);
                    executed += 1;
                    ep.calls.push(call);
                    let (mut obs, failed) = match outcome {
                        Ok((text, value)) => {
                            ep.last_result = Some(value);
                            (text, false)
                        }
                        Err(msg) => (format!("error: {msg}"), true),
                    };
                    if extra_actions {
                        obs.push_str("\n(only the first action was executed; perform a SINGLE action at a time)");
                    }
                    Turn { thought, action: Some(action), action_input: Some(Value::Object(args)), observation: obs, failed }
                }
            },
        };
        let obs = truncate_observation(&turn.observation, ctx.config.observation_limit);
        scratchpad.push_str(&format!("{}\nObservation: {obs}\nThought:", if shown.starts_with(' ') { shown.clone() } else { format!(" {shown}") }));
        ep.turns.push(Turn { observation: obs, ..turn });
    }
    if has_repeat(&ep) {
        ep.outcome = Outcome::Stuck;
    }
    ep
}

fn fail(mut ep: Episode, cause: String) -> Episode {
    ep.outcome = Outcome::Error;
    ep.cause = Some(cause);
    ep
}

fn has_repeat(ep: &Episode) -> bool {
    ep.turns.windows(2).any(|w| w[0].action.is_some() && w[0].action == w[1].action && w[0].action_input == w[1].action_input)
}

/// An episode succeeds when it gave a final answer and either that answer or
/// the last successful tool result matches the gold answer.
pub fn episode_completion(ep: &Episode, gold: &Value) -> Completion {
    let Some(answer) = &ep.final_answer else {
        let cause = match ep.outcome {
            Outcome::Error => ep.cause.clone().unwrap_or_else(|| "error".into()),
            _ => "no final answer".into(),
        };
        return Completion { completed: false, answer: ep.last_result.clone(), cause: Some(cause) };
    };
    let stated = serde_json::from_str::<Value>(answer).ok().or_else(|| python_literal(answer)).unwrap_or_else(|| json!(answer));
    if answers_match(&stated, gold) {
        return Completion { completed: true, answer: Some(stated), cause: None };
    }
    if let Some(last) = &ep.last_result {
        if answers_match(last, gold) {
            return Completion { completed: true, answer: Some(last.clone()), cause: None };
        }
    }
    Completion { completed: false, answer: Some(stated), cause: Some("answer mismatch".into()) }
}

/// The attempted actions as a prediction, for intent and slot scoring.
pub fn episode_prediction(ep: &Episode) -> ParsedPrediction {
    ParsedPrediction {
        calls: ep.calls.clone(),
        parse_stage: if ep.calls.is_empty() { ParseStage::Failed } else { ParseStage::Json },
        raw_text: String::new(),
        item_count: ep.calls.len(),
        format_error: None,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFlags {
    pub loops: usize,
    pub oob: bool,
    pub stuck: bool,
    pub unclassified: bool,
}

pub fn classify_trace(ep: &Episode, completed: bool) -> TraceFlags {
    let oob = !completed && ep.final_answer.is_none() && ep.turns.len() >= ep.budget;
    let stuck = !completed && has_repeat(ep);
    TraceFlags { loops: ep.turns.len(), oob, stuck, unclassified: !completed && !oob && !stuck }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub episodes: usize,
    pub avg_loops: f64,
    pub completed: usize,
    pub oob: usize,
    pub stuck: usize,
    pub unclassified: usize,
}

impl AgentSummary {
    pub fn from_flags(flags: &[(TraceFlags, bool)]) -> AgentSummary {
        let n = flags.len();
        AgentSummary {
            episodes: n,
            avg_loops: if n == 0 { 0.0 } else { flags.iter().map(|(f, _)| f.loops).sum::<usize>() as f64 / n as f64 },
            completed: flags.iter().filter(|(_, c)| *c).count(),
            oob: flags.iter().filter(|(f, _)| f.oob).count(),
            stuck: flags.iter().filter(|(f, _)| f.stuck).count(),
            unclassified: flags.iter().filter(|(f, _)| f.unclassified).count(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_placeholders() {
        let out = render_template(
            "{tools}|{tool_names}|{input}|{previousruns}|{agent_scratchpad}|{{x}}",
            &PromptParts { tools: "T", tool_names: "a, b", input: "Q", previousruns: "", agent_scratchpad: "S" },
        );
        assert_eq!(out, "T|a, b|Q||S|{x}");
        assert!(DEFAULT_TEMPLATE.contains("Question: {input}"));
    }

    #[test]
    fn well_formed_triple() {
        let t = parse_action(" I filter first.\nAction: filter_data\nAction Input: {\"key_name\": \"k\", \"value\": 1,}\n");
        match t {
            ModelTurn::Action { thought, action, input, extra_actions } => {
                assert_eq!(thought, "I filter first.");
                assert_eq!(action, "filter_data");
                assert_eq!(input.unwrap()["value"], json!(1));
                assert!(!extra_actions);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn observation_prefix_is_corrected() {
        assert!(matches!(parse_action("Observation: 3 rows"), ModelTurn::Malformed(_)));
    }

    #[test]
    fn multiple_actions_flagged() {
        let t = parse_action("Action: a\nAction Input: {}\nAction: b\nAction Input: {}");
        assert!(matches!(t, ModelTurn::Action { ref action, extra_actions: true, .. } if action == "a"));
    }

    #[test]
    fn final_answer() {
        assert_eq!(
            parse_action(" I now know the final answer\nFinal Answer: Business"),
            ModelTurn::Final { thought: "I now know the final answer".into(), answer: "Business".into() }
        );
    }

    #[test]
    fn truncation_keeps_limit() {
        let long = "é".repeat(5000);
        let t = truncate_observation(&long, 4096);
        assert!(t.len() <= 4096);
        assert!(t.ends_with(TRUNCATION_MARKER));
        assert_eq!(truncate_observation("short", 4096), "short");
    }

    fn turn(action: &str, input: Value) -> Turn {
        Turn { thought: String::new(), action: Some(action.into()), action_input: Some(input), observation: String::new(), failed: true }
    }

    fn episode(turns: Vec<Turn>, final_answer: Option<&str>) -> Episode {
        Episode {
            sample_id: 0,
            turns,
            budget: 10,
            final_answer: final_answer.map(str::to_string),
            outcome: Outcome::Oob,
            cause: None,
            calls: Vec::new(),
            last_result: None,
        }
    }

    #[test]
    fn trace_flags() {
        let ok = episode(vec![turn("a", json!({})); 4], Some("x"));
        assert_eq!(classify_trace(&ok, true), TraceFlags { loops: 4, ..Default::default() });
        let stuck = episode(vec![turn("A", json!({})), turn("A", json!({})), turn("B", json!({}))], Some("x"));
        let f = classify_trace(&stuck, false);
        assert!(f.stuck && !f.oob && !f.unclassified);
        let oob = episode((0..10).map(|i| turn("A", json!({"i": i}))).collect(), None);
        let f = classify_trace(&oob, false);
        assert!(f.oob && !f.stuck);
        let both = episode(vec![turn("A", json!({})); 10], None);
        let f = classify_trace(&both, false);
        assert!(f.oob && f.stuck);
    }
}

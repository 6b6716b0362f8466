//! Acceptance suite. Runs without the test harness so every criterion prints
//! one PASS/FAIL line; exits nonzero if any fails.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use apibench_core::agent::{
    classify_trace, episode_completion, run_episode, AgentConfig, AgentContext, Outcome, ScriptedClient,
};
use apibench_core::dataset::{build, parse_corpus, run_gold, sql_oracle, BuildOutput, EvalInstance};
use apibench_core::db::{materialize_bundled, BUNDLED_CORPUS};
use apibench_core::endpoint::{HttpRest, LocalRest};
use apibench_core::eval::{
    align_names, classify_error, intent_metrics, parse_model_output, score_text, ErrorCategory, MetricsReport,
    ParseStage, Scorer,
};
use apibench_core::normalize::answers_match;
use apibench_core::pool::{Formulation, PoolSet, Target};
use apibench_core::runtime::{RestBackend, ToolCall};
use apibench_core::spec::{obfuscate_pool, shortlist_size, shortlist_tools};
use apibench_core::sql::parse_sql;
use apibench_core::transpile::sel::rewrite_to_sel;
use apibench_core::transpile::slot::compile_slot;
use apibench_core::value::json_as_text;
use apibench_server::{spawn, AppState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome_ = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome_ + 'a>);

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

struct World {
    dir: tempfile::TempDir,
    outputs: Vec<BuildOutput>,
    build_time: Duration,
}

impl World {
    fn new() -> World {
        let dir = tempfile::tempdir().unwrap();
        materialize_bundled(dir.path()).unwrap();
        let start = Instant::now();
        let outputs = build(&parse_corpus(BUNDLED_CORPUS).unwrap(), dir.path()).unwrap();
        World { dir, outputs, build_time: start.elapsed() }
    }

    fn root(&self) -> &Path {
        self.dir.path()
    }

    fn out(&self, f: Formulation) -> &BuildOutput {
        self.outputs.iter().find(|o| o.formulation == f).unwrap()
    }

    fn rest(&self) -> Arc<dyn RestBackend> {
        Arc::new(LocalRest::new(self.root()))
    }

    fn scorer<'a>(&'a self, pools: &'a PoolSet) -> Scorer<'a> {
        Scorer { db_root: self.root(), pools, rest: Some(self.rest()) }
    }

    fn instance(&self, f: Formulation, needle: &str) -> &EvalInstance {
        self.out(f).instances.iter().find(|i| i.input.contains(needle)).unwrap()
    }
}

fn gold_text(inst: &EvalInstance) -> String {
    serde_json::to_string(&inst.output).unwrap()
}

/// 1. Every retained gold sequence and endpoint equals the SQL oracle.
fn semantic_preservation(w: &World) -> Outcome_ {
    let start = Instant::now();
    let mut checked = 0;
    for out in &w.outputs {
        check!(!out.instances.is_empty(), "{} retained nothing", out.formulation);
        for inst in &out.instances {
            let oracle = sql_oracle(w.root(), &inst.dataset_name, &inst.query)?;
            let pool = out.pools.pool(&inst.dataset_name).ok_or("pool missing")?;
            let got = run_gold(w.root(), pool, inst.initialization_step.as_ref(), &inst.output, Some(w.rest()))?;
            check!(answers_match(&got, &oracle), "{} sample {}: {got} != {oracle}", out.formulation, inst.sample_id);
            checked += 1;
        }
    }
    let elapsed = start.elapsed() + w.build_time;
    check!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("{checked} sequences equal the oracle in {:.1}s", elapsed.as_secs_f64()))
}

/// Renames the paper's file-style labels to the compiled ones by position.
fn relabel(paper: &Value, ours: &[ToolCall]) -> Value {
    let mut text = paper.to_string();
    let paper_labels: Vec<String> = paper.as_array().unwrap().iter().map(|c| c["label"].as_str().unwrap().to_string()).collect();
    for (p, c) in paper_labels.iter().zip(ours) {
        let label = c.label.clone().unwrap();
        text = text.replace(&format!("\"{p}\""), &format!("\"{label}\"")).replace(&format!("\"data_source\":\"{label}\""), &format!("\"data_source\":\"${label}$\""));
    }
    text = text.replace("\"data_0.csv\"", "\"$starting_table_var$\"");
    serde_json::from_str(&text).unwrap()
}

/// 2. Worked examples printed in the paper.
fn micro_facts(w: &World) -> Outcome_ {
    let magnet = "SELECT T2.School FROM satscores AS T1 INNER JOIN schools AS T2 ON T1.cds = T2.CDSCode WHERE T2.Magnet = 1 AND T1.NumTstTakr > 500";
    let listing2 = json!([
        {"name": "filter_data", "arguments": {"data_source": "data_0.csv", "key_name": "schools_Magnet", "value": 1.0, "condition": "equal_to"}, "label": "data_1.csv"},
        {"name": "filter_data", "arguments": {"data_source": "data_1.csv", "key_name": "satscores_NumTstTakr", "value": 500.0, "condition": "greater_than"}, "label": "data_2.csv"},
        {"name": "retrieve_data", "arguments": {"data_source": "data_2.csv", "key_name": "schools_School", "distinct": false, "limit": -1}, "label": "retrieved_json"}
    ]);
    let slot = compile_slot(&parse_sql(magnet).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    check!(serde_json::to_value(&slot).unwrap() == relabel(&listing2, &slot), "listing 2 mismatch: {}", json!(slot));

    // the paper's getter reads `get_schools_Schools`; the column is `School`
    let listing3 = json!([
        {"name": "select_data_equal_to", "arguments": {"data_source": "data_0.csv", "key_name": "schools_Magnet", "value": 1.0}, "label": "data_1.csv"},
        {"name": "select_data_greater_than", "arguments": {"data_source": "data_1.csv", "key_name": "satscores_NumTstTakr", "value": 500.0}, "label": "data_2.csv"},
        {"name": "get_schools_School", "arguments": {"data_source": "data_2.csv"}, "label": "retrieved_json"}
    ]);
    let sel = rewrite_to_sel(&slot);
    check!(serde_json::to_value(&sel).unwrap() == relabel(&listing3, &sel), "listing 3 mismatch: {}", json!(sel));
    let inst = w.instance(Formulation::Slot, "magnet schools or offer");
    check!(answers_match(&inst.gold_answer, &json!(["Millikan High", "Polytechnic High", "Troy High"])), "magnet answer {}", inst.gold_answer);

    let simple = w.instance(Formulation::Slot, "Angela Sanders");
    let expected = json!([
        {"name": "filter_data", "arguments": {"data_source": "$starting_table_var$", "key_name": "member_first_name", "value": "Angela", "condition": "equal_to"}, "label": "FILTERED_DF_0"},
        {"name": "filter_data", "arguments": {"data_source": "$FILTERED_DF_0$", "key_name": "member_last_name", "value": "Sanders", "condition": "equal_to"}, "label": "FILTERED_DF_1"},
        {"name": "retrieve_data", "arguments": {"data_source": "$FILTERED_DF_1$", "key_name": "major_major_name", "distinct": false, "limit": -1}, "label": "SELECT_COL_0"}
    ]);
    check!(serde_json::to_value(&simple.output).unwrap() == expected, "simple example sequence {}", json!(simple.output));
    check!(answers_match(&simple.gold_answer, &json!("Business")), "simple example answer {}", simple.gold_answer);

    let hard = w.instance(Formulation::Slot, "Kevin Berigaud");
    let expected = json!([
        {"name": "transform_data", "arguments": {"data_source": "$starting_table_var$", "key_name": "Player_Attributes_date", "operation_type": "substring", "operation_args": {"start_index": 0, "end_index": 10}}, "label": "TRANSFORMED_DF_0"},
        {"name": "filter_data", "arguments": {"data_source": "$TRANSFORMED_DF_0$", "key_name": "Player_Attributes_date", "value": "2013-02-22", "condition": "equal_to"}, "label": "FILTERED_DF_1"},
        {"name": "filter_data", "arguments": {"data_source": "$FILTERED_DF_1$", "key_name": "Player_player_name", "value": "Kevin Berigaud", "condition": "equal_to"}, "label": "FILTERED_DF_2"},
        {"name": "retrieve_data", "arguments": {"data_source": "$FILTERED_DF_2$", "key_name": "Player_Attributes_defensive_work_rate", "distinct": false, "limit": -1}, "label": "SELECT_COL_0"}
    ]);
    check!(serde_json::to_value(&hard.output).unwrap() == expected, "challenging example sequence {}", json!(hard.output));
    check!(answers_match(&hard.gold_answer, &json!("medium")), "challenging example answer {}", hard.gold_answer);

    let rest = w.out(Formulation::Rest);
    let state = AppState::load(w.root(), &rest.pools, Duration::from_secs(10), 8).map_err(|e| e.to_string())?;
    let server = spawn(state, "127.0.0.1:0".parse().unwrap()).map_err(|e| e.to_string())?;
    let url = format!("{}/v1/bird/california_schools/free_meal_count_ratio?county_name=Alameda", server.base_url());
    let body: Value = reqwest::blocking::get(&url).and_then(|r| r.json()).map_err(|e| e.to_string())?;
    check!(body == json!({"free_meal_count_ratio": [1.0]}), "Alameda over HTTP gave {body}");
    let alameda = rest.instances.iter().find(|i| i.query.contains("Alameda")).ok_or("no Alameda instance")?;
    let http: Arc<dyn RestBackend> = Arc::new(HttpRest::new(&server.base_url(), Duration::from_secs(10))?);
    let got = run_gold(w.root(), rest.pools.pool("california_schools").unwrap(), None, &alameda.output, Some(http))?;
    check!(answers_match(&got, &json!(1.0)), "Alameda gold call gave {got}");
    Ok("listings 1-3, simple=Business, challenging=medium, Alameda=1.0 over HTTP".into())
}

fn brute_force_lcs(a: &[u8], b: &[u8]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let pick: Vec<u8> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
        let mut it = b.iter();
        if pick.iter().all(|x| it.any(|y| y == x)) {
            best = best.max(pick.len());
        }
    }
    best
}

/// 3. Metric identities, degeneracies and alignment optimality.
fn metric_battery(w: &World) -> Outcome_ {
    for f in Formulation::ALL {
        let out = w.out(f);
        let s = w.scorer(&out.pools);
        let ident = MetricsReport::from_scores(f, "", out.instances.iter().map(|i| score_text(&s, i, &gold_text(i))).collect());
        check!(ident.intent.f1 == 1.0 && ident.slot.f1 == 1.0 && ident.completion_rate == 1.0, "{f} identity: {:?} {:?} {}", ident.intent, ident.slot, ident.completion_rate);
        let empty = MetricsReport::from_scores(f, "", out.instances.iter().map(|i| score_text(&s, i, "")).collect());
        check!(
            empty.intent.f1 == 0.0 && empty.intent.precision == 0.0 && empty.slot.f1 == 0.0 && empty.completion_rate == 0.0,
            "{f} empty prediction scored nonzero"
        );
    }
    let gold = ["filter_data", "filter_data", "retrieve_data"];
    let m = intent_metrics(&align_names(&["filter_data"], &gold), 1, 3);
    check!(m.precision == 1.0 && (m.recall - 0.333).abs() <= 0.001 && (m.f1 - 0.5).abs() <= 0.001, "1-of-3 gave {m:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    for trial in 0..1000 {
        let a: Vec<u8> = (0..rng.gen_range(0..=6)).map(|_| rng.gen_range(0..3)).collect();
        let b: Vec<u8> = (0..rng.gen_range(0..=6)).map(|_| rng.gen_range(0..3)).collect();
        let names = |v: &[u8]| v.iter().map(|x| format!("t{x}")).collect::<Vec<_>>();
        let got = align_names(&names(&a), &names(&b)).pairs.len();
        check!(got == brute_force_lcs(&a, &b), "trial {trial}: {a:?} vs {b:?} aligned {got}");
    }
    Ok(format!("identity=1, empty=0, 1-of-3 = (1, {:.3}, {:.3}), 1000 LCS trials agree", m.recall, m.f1))
}

/// 4. Malformed outputs printed in the paper.
fn parser_battery() -> Outcome_ {
    let qwen = "<tool_call>\n{\"name\": \"select_data_equal_to\", \"arguments\": {\"data_source\": \"$starting_table_var$\", \"key_name\": \"races_raceId\", \"value\": 901}, \"label\": \"FILTERED_DF\"}\n</tool_call>\n<tool_call>\n{\"name\": \"get_races_years\", \"arguments\": {\"data_source\": \"$FILTERED_DF$\"}, \"label\": \"RACE_YEAR\"}\n</tool_call>\n<tool_call>\n{\"name\": \"get_seasons_urls\", \"arguments\": {\"data_source\": \"$RACE_YEAR$\"}, \"label\": \"SEASON_URL\"}\n</tool_call>";
    let p = parse_model_output(qwen);
    let expected = vec![
        ToolCall::new("select_data_equal_to", json!({"data_source": "$starting_table_var$", "key_name": "races_raceId", "value": 901}), Some("FILTERED_DF")),
        ToolCall::new("get_races_years", json!({"data_source": "$FILTERED_DF$"}), Some("RACE_YEAR")),
        ToolCall::new("get_seasons_urls", json!({"data_source": "$RACE_YEAR$"}), Some("SEASON_URL")),
    ];
    check!(p.calls == expected, "qwen parsed {:?}", p.calls);

    let deepseek = r#"    To determine which molecules containing the "C" (carbon) element are not carcinogenic, we need to:

1. Identify the molecules that contain the "C" element.
2. Check the carcinogenic flag for each of these molecules.

Here are the steps and the corresponding tool calls:

1. **Get molecule IDs with the "C" element:**
   ```json
   {"name": "get_molecule_ids_with_element_v1_bird", "arguments": {"element": "C"}}
   ```

2. **For each molecule ID, check the carcinogenic flag:**
   ```json
   {"name": "get_carcinogenic_flag_v1_bird_toxicology_carcinogenic_flag_get", "arguments": {"atom_id": "atom_id_from_molecule"}}
   ```

However, since we need to check the carcinogenic flag for each molecule, and the tool `get_carcinogenic_flag_v1_bird_toxicology_carcinogenic_flag_get` requires an `atom_id`, we need to first get the atom IDs for each molecule. This would involve additional steps:

3. **Get atom IDs for each molecule:**
   ```json
   {"name": "get_atom_ids_by_molecule_id_range_and_element_v1_bird", "arguments": {"start_molecule_id": "molecule_id", "end_molecule_id": "molecule_id", "element": "C"}}
   ```

4. **Check the carcinogenic flag for each atom ID:**
   ```json
   {"name": "get_carcinogenic_flag_v1_bird_toxicology_carcinogenic_flag_get", "arguments": {"atom_id": "atom_id"}}
   ```

This process would need to be repeated for each molecule ID obtained in step 1.

Since this involves multiple steps and potentially multiple tool calls, I can initiate the first step to get the molecule IDs containing the "C" element. Here is the first tool call:

```json
{"name": "get_molecule_ids_with_element_v1_bird", "arguments": {"element": "C"}}
```"#;
    let p = parse_model_output(deepseek);
    let expected = vec![ToolCall::new("get_molecule_ids_with_element_v1_bird", json!({"element": "C"}), None)];
    check!(p.parse_stage == ParseStage::FencedBlock && p.calls == expected, "deepseek parsed {:?} via {:?}", p.calls, p.parse_stage);

    let bracketed = r#"Sure, here are the calls: [[{"name": "get_card_status_v1_bird_card_games_card_status_get", "arguments": {"card_name": "Cloudchaser Eagle"}}]]"#;
    let p = parse_model_output(bracketed);
    let expected = vec![ToolCall::new("get_card_status_v1_bird_card_games_card_status_get", json!({"card_name": "Cloudchaser Eagle"}), None)];
    check!(p.calls == expected, "extra brackets parsed {:?}", p.calls);

    let mixtral = r#"[{"name": "get_card_status_v1_bird_card_games_card_status_get", "arguments": {"card_name": "Cloudchaser Eagle"}}]

USER: What is the format of card "Cloudchaser Eagle"?
ASSISTANT:
[{"name": "get_card_format_v1_bird_card_games_card_format_get", "arguments": {"card_name": "Cloudchaser Eagle"}}]

USER: What is the artist of card "Cloudchaser Eagle"?
ASSISTANT:
[{"name": "get_artist_by_language_v1_bird_card_games_artist_by_language_get", "arguments": {"language": "English"}}]

USER: What is the percentage of borderless cards?
ASSISTANT:
[{"name": "get_borderless_percentage_v1_bird_card_games_borderless_percentage_get", "arguments": {}}]

USER: What is the count of banned cards with border color "black"?
ASSISTANT:
[{"name": "get_banned_count_v1_bird_card_games_banned_count_get", "arguments": {"border_color": "black"}}]

USER: What are the ids and language for converted mana cost 5 and set code "M15"?
ASSISTANT:
[{"name": "get_id_language_v1_bird_card_games_id_language_get", "arguments": {"converted_mana_cost": 5, "set_code": "M15"}}]

USER: What are the ids and date for original type "creature"?
ASSISTANT:
[{"name": "get_id_date_v1_bird_card_games_id_date_get", "arguments": {"original_type": "creature"}}]

USER: What are the colors and format for id range 1-100?
ASSISTANT:
[{"name": "get_colors_format_v1_""#;
    let gold = vec![ToolCall::new("get_card_status_v1_bird_card_games_card_status_get", json!({"card_name": "Cloudchaser Eagle"}), None)];
    let pool = apibench_core::pool::ToolPool::new(Formulation::Rest, "card_games");
    let category = classify_error(&gold, &[gold[0].name.clone()], &pool, &parse_model_output(mixtral));
    check!(category == ErrorCategory::InstructionAlignmentFailure, "mixtral classified {category:?}");
    Ok("qwen tags, deepseek fence, extra brackets parse; mixtral runaway is instruction_alignment_failure".into())
}

/// 5. One crafted failure per category, plus overlaps resolved by precedence.
fn classifier_precedence(w: &World) -> Outcome_ {
    let out = w.out(Formulation::Slot);
    let inst = w.instance(Formulation::Slot, "Angela Sanders");
    let pool = out.pools.pool(&inst.dataset_name).unwrap();
    check!(inst.tools.iter().any(|t| t == "sort_data"), "sort_data not offered");
    let gold = &inst.output;
    let with = |edit: &dyn Fn(&mut Vec<Value>)| {
        let mut calls: Vec<Value> = gold.iter().map(|c| serde_json::to_value(c).unwrap()).collect();
        edit(&mut calls);
        Value::Array(calls).to_string()
    };
    let cases: Vec<(&str, String, ErrorCategory)> = vec![
        ("prose", "The major is probably Business.".into(), ErrorCategory::InstructionAlignmentFailure),
        ("short", with(&|c| { c.pop(); }), ErrorCategory::WrongFuncCount),
        ("names only", json!(["filter_data", "filter_data", "retrieve_data"]).to_string(), ErrorCategory::WrongFuncFormat),
        ("invented", with(&|c| c[0]["name"] = json!("lookup_member")), ErrorCategory::HallucinatedFuncName),
        ("wrong tool", with(&|c| c[0]["name"] = json!("sort_data")), ErrorCategory::WrongFuncName),
        ("missing", with(&|c| { c[0]["arguments"].as_object_mut().unwrap().remove("condition"); }), ErrorCategory::MissingRequiredParameter),
        ("extra", with(&|c| c[2]["arguments"]["order"] = json!("asc")), ErrorCategory::UnexpectedParam),
        ("value", with(&|c| c[1]["arguments"]["value"] = json!("Smith")), ErrorCategory::ValueError),
        // overlaps: the earlier category wins
        ("short + invented", with(&|c| { c.pop(); c[0]["name"] = json!("lookup_member"); }), ErrorCategory::WrongFuncCount),
        ("invented + missing", with(&|c| { c[0]["name"] = json!("lookup_member"); c[1]["arguments"].as_object_mut().unwrap().remove("value"); }), ErrorCategory::HallucinatedFuncName),
        ("missing + value", with(&|c| { c[0]["arguments"].as_object_mut().unwrap().remove("condition"); c[1]["arguments"]["value"] = json!("Smith"); }), ErrorCategory::MissingRequiredParameter),
    ];
    let n = cases.len();
    for (label, text, want) in cases {
        let got = classify_error(gold, &inst.tools, pool, &parse_model_output(&text));
        check!(got == want, "{label}: got {} want {}", got.name(), want.name());
        let score = score_text(&w.scorer(&out.pools), inst, &text);
        check!(!score.completed && score.error_category == Some(want), "{label}: scorer assigned {:?}", score.error_category);
    }
    Ok(format!("8 categories and {} overlaps assigned as expected", n - 8))
}

/// 6. Scripted agents: gold replay, a never-finishing stub and a repeating stub.
fn react_harness(w: &World) -> Outcome_ {
    let config = AgentConfig::default();
    let mut episodes = 0;
    for out in &w.outputs {
        let ctx = AgentContext { db_root: w.root(), rest: Some(w.rest()), config: &config };
        for inst in &out.instances {
            let pool = out.pools.pool(&inst.dataset_name).unwrap();
            let client = ScriptedClient::replaying(&inst.output, &inst.gold_answer.to_string());
            let ep = run_episode(&ctx, inst, pool, &client);
            let done = episode_completion(&ep, &inst.gold_answer).completed;
            let flags = classify_trace(&ep, done);
            check!(done && ep.outcome == Outcome::Completed, "{} sample {} did not complete: {:?}", out.formulation, inst.sample_id, ep.cause);
            check!(ep.turns.len() <= inst.output.len() + 1, "sample {} took {} turns", inst.sample_id, ep.turns.len());
            check!(!flags.oob && !flags.stuck && !flags.unclassified, "gold replay flagged {flags:?}");
            episodes += 1;
        }
    }

    let out = w.out(Formulation::Slot);
    let inst = w.instance(Formulation::Slot, "Angela Sanders");
    let pool = out.pools.pool(&inst.dataset_name).unwrap();
    let ctx = AgentContext { db_root: w.root(), rest: None, config: &config };

    let never: Vec<String> = (0..20)
        .map(|i| format!(" Let me look again.\nAction: sort_data\nAction Input: {{\"data_source\": \"$starting_table_var$\", \"key_name\": \"member_first_name\", \"ascending\": {}, \"label\": \"S{i}\"}}", i % 2 == 0))
        .collect();
    let ep = run_episode(&ctx, inst, pool, &ScriptedClient::new(never));
    let flags = classify_trace(&ep, episode_completion(&ep, &inst.gold_answer).completed);
    check!(ep.outcome == Outcome::Oob && ep.turns.len() == 10, "never-finishing: {:?} after {} turns", ep.outcome, ep.turns.len());
    check!(flags.oob && !flags.stuck && !flags.unclassified, "never-finishing flagged {flags:?}");

    let step = " Filter by first name.\nAction: filter_data\nAction Input: {\"data_source\": \"$starting_table_var$\", \"key_name\": \"member_first_name\", \"value\": \"Angela\", \"condition\": \"equal_to\"}";
    let ep = run_episode(&ctx, inst, pool, &ScriptedClient::new([step, step, step, " I now know the final answer\nFinal Answer: Law"]));
    let flags = classify_trace(&ep, episode_completion(&ep, &inst.gold_answer).completed);
    check!(ep.turns.len() == 4, "repeating stub ran {} turns", ep.turns.len());
    check!(flags.stuck && !flags.oob && !flags.unclassified, "repeating stub flagged {flags:?}");
    Ok(format!("{episodes} gold episodes within budget; never-finishing OOB at 10 turns; repeating stub stuck"))
}

/// 7. Obfuscation keeps gold replayable; shortlists keep gold and follow the size table.
fn perturbation_invariance(w: &World) -> Outcome_ {
    let mut replayed = 0;
    for out in &w.outputs {
        for seed in [1u64, 2, 3] {
            let mut pools = PoolSet::new(out.formulation);
            let mut maps = HashMap::new();
            for (db, pool) in &out.pools.pools {
                let (ob, map) = obfuscate_pool(pool, seed);
                pools.pools.insert(db.clone(), ob);
                maps.insert(db.clone(), map);
            }
            let s = w.scorer(&pools);
            for inst in &out.instances {
                let map = &maps[&inst.dataset_name];
                let mut renamed = inst.clone();
                renamed.output = map.rename_calls(&inst.output);
                renamed.tools = map.rename_tools(&inst.tools);
                check!(renamed.output.iter().all(|c| c.name.starts_with("FUNC_")), "unrenamed call");
                let score = score_text(&s, &renamed, &gold_text(&renamed));
                check!(score.completed, "{} sample {} seed {seed}: {:?}", out.formulation, inst.sample_id, score.failure_cause);
                replayed += 1;
            }
        }
    }

    let table: [(usize, [usize; 5]); 11] = [
        (126, [12, 31, 63, 94, 126]),
        (154, [15, 38, 77, 115, 154]),
        (109, [10, 27, 54, 81, 109]),
        (156, [15, 39, 78, 117, 156]),
        (135, [13, 33, 67, 101, 135]),
        (95, [9, 23, 47, 71, 95]),
        (91, [9, 22, 45, 68, 91]),
        (75, [7, 18, 37, 56, 75]),
        (130, [13, 32, 65, 97, 130]),
        (118, [11, 29, 59, 88, 118]),
        (61, [6, 15, 30, 45, 61]),
    ];
    let fractions = [0.10, 0.25, 0.50, 0.75, 1.0];
    for (n, row) in table {
        for (f, want) in fractions.iter().zip(row) {
            check!(shortlist_size(n, *f, 1) == want, "size({n}, {f}) = {} want {want}", shortlist_size(n, *f, 1));
        }
    }
    let universe75: Vec<String> = (0..75).map(|i| format!("tool_{i}")).collect();
    let s = shortlist_tools(&universe75, &["tool_40".to_string()], 0.10, 0, 0).map_err(|e| e.to_string())?;
    check!(s.tools.len() == 7, "75 tools at 10% gave {}", s.tools.len());

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..1000 {
        let n = rng.gen_range(1..=160);
        let universe: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let gold: Vec<String> = (0..rng.gen_range(1..=3)).map(|_| universe[rng.gen_range(0..n)].clone()).collect();
        for f in [0.10, 0.25, 0.50, 0.75] {
            let s = shortlist_tools(&universe, &gold, f, rng.gen(), trial).map_err(|e| e.to_string())?;
            check!(gold.iter().all(|g| s.tools.contains(g)), "trial {trial} at {f} dropped gold");
            let distinct = { let mut g = gold.clone(); g.sort(); g.dedup(); g.len() };
            check!(s.tools.len() == shortlist_size(n, f, distinct), "trial {trial} at {f}: size {}", s.tools.len());
        }
    }
    Ok(format!("{replayed} obfuscated replays complete; size table exact; 75@10% = 7; 1000 shortlist trials keep gold"))
}

/// 8. Live service: concurrency and error statuses.
fn rest_contract(w: &World) -> Outcome_ {
    let rest = w.out(Formulation::Rest);
    let state = AppState::load(w.root(), &rest.pools, Duration::from_secs(10), 16).map_err(|e| e.to_string())?;
    let server = spawn(state, "127.0.0.1:0".parse().unwrap()).map_err(|e| e.to_string())?;
    let base = server.base_url();
    let client = reqwest::blocking::Client::builder().timeout(Duration::from_secs(30)).build().unwrap();
    let mut requests = Vec::new();
    for inst in &rest.instances {
        let call = &inst.output[0];
        let entry = rest.pools.pool(&inst.dataset_name).unwrap().get(&call.name).unwrap();
        let Target::Rest { endpoint } = &entry.binding.target else { return Err("non-REST binding".into()) };
        let q: Vec<(String, String)> = call.arguments.iter().map(|(k, v)| (k.clone(), json_as_text(v))).collect();
        requests.push((endpoint.path.clone(), q));
    }
    let requests: Vec<_> = requests.iter().cycle().take(100).cloned().collect();
    let fetch = |(path, q): &(String, Vec<(String, String)>)| -> Result<(u16, String), String> {
        let r = client.get(format!("{base}{path}")).query(q).send().map_err(|e| e.to_string())?;
        Ok((r.status().as_u16(), r.text().map_err(|e| e.to_string())?))
    };
    let serial: Vec<_> = requests.iter().map(fetch).collect::<Result<_, _>>()?;
    let parallel: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = requests.iter().map(|r| s.spawn(move || fetch(r))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect::<Result<Vec<_>, _>>()
    })?;
    check!(serial.iter().all(|(s, _)| *s == 200), "serial replay had non-200 responses");
    check!(serial == parallel, "parallel responses differ from serial");

    let status = |url: String| client.get(url).send().map(|r| r.status().as_u16()).map_err(|e| e.to_string());
    let alameda = format!("{base}/v1/bird/california_schools/free_meal_count_ratio");
    check!(status(alameda.clone())? == 422, "missing parameter not 422");
    let typed = rest
        .pools
        .rest_endpoints()
        .find(|e| e.arguments.values().any(|p| p.ty == "integer" || p.ty == "number"))
        .ok_or("no numeric endpoint")?;
    let q: Vec<String> = typed.arguments.iter().map(|(k, p)| format!("{k}={}", if p.ty == "string" { "x" } else { "abc" })).collect();
    check!(status(format!("{base}{}?{}", typed.path, q.join("&")))? == 400, "bad type not 400");
    check!(status(format!("{base}/v1/bird/unknown/route"))? == 404, "unknown path not 404");
    let post = client.post(&alameda).send().map_err(|e| e.to_string())?.status().as_u16();
    check!(post == 405, "POST gave {post}");
    Ok("100 parallel GETs equal serial replay; 422/400/404/405 as specified".into())
}

fn apibench(dir: &Path, args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_apibench"))
        .current_dir(dir)
        .env("APIBENCH_LOG", "error")
        .env_remove("APIBENCH_CONFIG")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    check!(o.status.success(), "apibench {args:?}: {}", String::from_utf8_lossy(&o.stderr));
    Ok(())
}

/// 9. Two independent runs produce byte-identical artifacts.
fn determinism() -> Outcome_ {
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for (k, dir) in runs.iter().enumerate() {
        let d = dir.path();
        apibench(d, &["build", "--db-root", "db", "--out", "ds"])?;
        let threads = if k == 0 { "1" } else { "8" };
        for f in ["slot", "sel", "rest"] {
            let ds = format!("ds/{f}");
            apibench(d, &["eval", "--dataset", &ds, "--db-root", "db", "--out", &format!("gold_{f}"), "--replay-gold", "--obfuscate", "--shortlist", "0.5", "--seed", "7", "--parallelism", threads])?;
            apibench(d, &["eval", "--dataset", &ds, "--db-root", "db", "--out", &format!("agent_{f}"), "--agent", "scripted", "--seed", "7", "--parallelism", threads])?;
        }
    }
    let mut compared = 0;
    for f in ["slot", "sel", "rest"] {
        let files = [
            format!("ds/{f}/dataset.jsonl"),
            format!("ds/{f}/spec.json"),
            format!("ds/{f}/pool.json"),
            format!("gold_{f}/report.json"),
            format!("gold_{f}/instances.csv"),
            format!("agent_{f}/report.json"),
            format!("agent_{f}/traces.jsonl"),
        ];
        for rel in files {
            let a = std::fs::read(runs[0].path().join(&rel)).map_err(|e| format!("{rel}: {e}"))?;
            let b = std::fs::read(runs[1].path().join(&rel)).map_err(|e| format!("{rel}: {e}"))?;
            check!(!a.is_empty() && a == b, "{rel} differs between runs");
            compared += 1;
        }
    }
    Ok(format!("{compared} artifacts byte-identical across two runs (1 vs 8 threads)"))
}

fn main() {
    let world = World::new();
    let criteria: Vec<Criterion> = vec![
        ("semantic preservation", Box::new(|| semantic_preservation(&world))),
        ("paper micro-facts", Box::new(|| micro_facts(&world))),
        ("metric battery", Box::new(|| metric_battery(&world))),
        ("parser battery", Box::new(parser_battery)),
        ("error-classifier precedence", Box::new(|| classifier_precedence(&world))),
        ("react harness", Box::new(|| react_harness(&world))),
        ("perturbation invariance", Box::new(|| perturbation_invariance(&world))),
        ("rest service contract", Box::new(|| rest_contract(&world))),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

use std::net::SocketAddr;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use apibench_core::dataset::{build, parse_corpus, run_gold, BuildOutput};
use apibench_core::db::{materialize_bundled, BUNDLED_CORPUS};
use apibench_core::endpoint::HttpRest;
use apibench_core::normalize::answers_match;
use apibench_core::pool::{Formulation, PoolSet, RestEndpoint};
use apibench_server::{spawn, AppState, RunningServer, ServeError};
use serde_json::{json, Value};

struct Fixture {
    dir: tempfile::TempDir,
    rest: BuildOutput,
    server: RunningServer,
}

fn local() -> SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        materialize_bundled(dir.path()).unwrap();
        let corpus = parse_corpus(BUNDLED_CORPUS).unwrap();
        let rest = build(&corpus, dir.path()).unwrap().into_iter().find(|o| o.formulation == Formulation::Rest).unwrap();
        let state = AppState::load(dir.path(), &rest.pools, Duration::from_secs(10), 16).unwrap();
        let server = spawn(state, local()).unwrap();
        Fixture { dir, rest, server }
    })
}

fn client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder().timeout(Duration::from_secs(20)).build().unwrap()
}

fn get(path_and_query: &str) -> (u16, Value) {
    let resp = client().get(format!("{}{path_and_query}", fixture().server.base_url())).send().unwrap();
    let status = resp.status().as_u16();
    assert_eq!(resp.headers()["content-type"], "application/json");
    (status, resp.json().unwrap())
}

fn endpoint(resource: &str) -> RestEndpoint {
    fixture().rest.pools.rest_endpoints().find(|e| e.resource == resource).unwrap().clone()
}

#[test]
fn health_and_spec() {
    assert_eq!(get("/health"), (200, json!({"status": "ok"})));
    let (status, spec) = get("/spec");
    assert_eq!(status, 200);
    let total: usize = spec.as_object().unwrap().values().map(|v| v.as_array().unwrap().len()).sum();
    assert_eq!(total, fixture().rest.pools.rest_endpoints().count());
}

#[test]
fn alameda_ratio_over_http() {
    let e = endpoint("free_meal_count_ratio");
    assert_eq!(e.path, "/v1/bird/california_schools/free_meal_count_ratio");
    let (status, body) = get(&format!("{}?county_name=Alameda", e.path));
    assert_eq!(status, 200);
    assert_eq!(body, json!({"free_meal_count_ratio": [1.0]}));
}

#[test]
fn every_instance_round_trips() {
    let f = fixture();
    let backend = Arc::new(HttpRest::new(&f.server.base_url(), Duration::from_secs(20)).unwrap());
    for inst in &f.rest.instances {
        let pool = f.rest.pools.pool(&inst.dataset_name).unwrap();
        let got = run_gold(f.dir.path(), pool, None, &inst.output, Some(backend.clone())).unwrap();
        assert!(answers_match(&got, &inst.gold_answer), "{}: {got} vs {}", inst.sample_id, inst.gold_answer);
    }
}

#[test]
fn error_statuses() {
    let e = endpoint("free_meal_count_ratio");
    let (status, body) = get(&e.path);
    assert_eq!(status, 422);
    assert_eq!(body["error"], "MissingParam");
    assert!(body["detail"].as_str().unwrap().contains("county_name"));

    let typed = fixture()
        .rest
        .pools
        .rest_endpoints()
        .find(|e| e.arguments.values().any(|p| p.ty == "integer" || p.ty == "number"))
        .unwrap()
        .clone();
    let query: Vec<String> = typed
        .arguments
        .iter()
        .map(|(k, p)| format!("{k}={}", if p.ty == "string" { "x" } else { "abc" }))
        .collect();
    let (status, body) = get(&format!("{}?{}", typed.path, query.join("&")));
    assert_eq!(status, 400, "{body}");
    assert_eq!(body["error"], "BadType");

    let (status, body) = get("/v1/bird/nowhere");
    assert_eq!(status, 404);
    assert_eq!(body["error"], "NotFound");

    let resp = client().post(format!("{}{}", fixture().server.base_url(), e.path)).send().unwrap();
    assert_eq!(resp.status().as_u16(), 405);
}

#[test]
fn concurrent_load_matches_serial() {
    let f = fixture();
    let mut urls = Vec::new();
    for inst in &f.rest.instances {
        let call = &inst.output[0];
        let pool = f.rest.pools.pool(&inst.dataset_name).unwrap();
        let e = match &pool.get(&call.name).unwrap().binding.target {
            apibench_core::pool::Target::Rest { endpoint } => endpoint.clone(),
            _ => unreachable!(),
        };
        let q: Vec<(String, String)> =
            call.arguments.iter().map(|(k, v)| (k.clone(), apibench_core::value::json_as_text(v))).collect();
        urls.push((e.path.clone(), q));
    }
    let urls: Vec<_> = urls.iter().cycle().take(100).cloned().collect();
    let base = f.server.base_url();
    let fetch = |(path, q): &(String, Vec<(String, String)>)| -> (u16, String) {
        let r = client().get(format!("{base}{path}")).query(q).send().unwrap();
        (r.status().as_u16(), r.text().unwrap())
    };
    let serial: Vec<_> = urls.iter().map(fetch).collect();
    let parallel: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = urls.iter().map(|u| s.spawn(move || fetch(u))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(serial.len(), 100);
    assert!(serial.iter().all(|(s, _)| *s == 200));
    assert_eq!(serial, parallel);
}

#[test]
fn bad_template_fails_at_startup() {
    let f = fixture();
    let mut pools: PoolSet = f.rest.pools.clone();
    let pool = pools.pools.values_mut().next().unwrap();
    let name = pool.names()[0].clone();
    let entry = pool.tools.get_mut(&name).unwrap();
    if let apibench_core::pool::Target::Rest { endpoint } = &mut entry.binding.target {
        endpoint.sql_template = "SELECT nope FROM missing_table".into();
    }
    assert!(matches!(
        AppState::load(f.dir.path(), &pools, Duration::from_secs(1), 1),
        Err(ServeError::Template { .. })
    ));
    assert!(matches!(AppState::load(f.dir.path(), &PoolSet::new(Formulation::Rest), Duration::from_secs(1), 1), Err(ServeError::NoEndpoints)));
}

//! Serves a REST tool pool over HTTP: one GET route per endpoint path, plus
//! `/health` and `/spec`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use apibench_core::db;
use apibench_core::endpoint::{execute, EndpointError};
use apibench_core::pool::{PoolSet, RestEndpoint};
use apibench_core::spec::emit_pool_set;
use axum::extract::{Query, State};
use axum::http::{Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use rusqlite::Connection;
use serde_json::{json, Map, Value};
use tokio::sync::{oneshot, Semaphore};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub db_root: PathBuf,
    pub pool_path: PathBuf,
    pub timeout: Duration,
    pub max_concurrent: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot read pool {path}: {reason}")]
    Pool { path: PathBuf, reason: String },
    #[error("pool has no REST endpoints")]
    NoEndpoints,
    #[error("endpoint `{name}` does not prepare: {reason}")]
    Template { name: String, reason: String },
    #[error("database `{0}`: {1}")]
    Database(String, String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Reusable read-only connections for one database.
struct ConnPool {
    path: PathBuf,
    idle: Mutex<Vec<Connection>>,
}

impl ConnPool {
    fn take(&self) -> Result<Connection, String> {
        if let Some(c) = self.idle.lock().unwrap_or_else(|e| e.into_inner()).pop() {
            return Ok(c);
        }
        db::open_read_only(&self.path).map_err(|e| e.to_string())
    }

    fn give(&self, c: Connection) {
        self.idle.lock().unwrap_or_else(|e| e.into_inner()).push(c);
    }
}

pub struct AppState {
    endpoints: HashMap<String, RestEndpoint>,
    dbs: HashMap<String, ConnPool>,
    spec: Value,
    limit: Semaphore,
    timeout: Duration,
}

impl AppState {
    /// Loads the pool and prepares every template; any failure aborts.
    pub fn load(db_root: &Path, pools: &PoolSet, timeout: Duration, max_concurrent: usize) -> Result<AppState, ServeError> {
        let mut endpoints = HashMap::new();
        let mut dbs: HashMap<String, ConnPool> = HashMap::new();
        for e in pools.rest_endpoints() {
            let pool = match dbs.entry(e.db.clone()) {
                std::collections::hash_map::Entry::Occupied(o) => o.into_mut(),
                std::collections::hash_map::Entry::Vacant(v) => {
                    let path = db::database_path(db_root, &e.db);
                    let conn = db::open_read_only(&path).map_err(|err| ServeError::Database(e.db.clone(), err.to_string()))?;
                    v.insert(ConnPool { path, idle: Mutex::new(vec![conn]) })
                }
            };
            let conn = pool.take().map_err(|r| ServeError::Database(e.db.clone(), r))?;
            let prepared = conn.prepare(&e.sql_template).map(|_| ());
            pool.give(conn);
            prepared.map_err(|err| ServeError::Template { name: e.name.clone(), reason: err.to_string() })?;
            endpoints.insert(e.path.clone(), e.clone());
        }
        if endpoints.is_empty() {
            return Err(ServeError::NoEndpoints);
        }
        Ok(AppState {
            endpoints,
            dbs,
            spec: emit_pool_set(&pools.pools),
            limit: Semaphore::new(max_concurrent.max(1)),
            timeout,
        })
    }

    pub fn from_config(config: &ServiceConfig) -> Result<AppState, ServeError> {
        let pools = apibench_core::dataset::read_pool(&config.pool_path)
            .map_err(|e| ServeError::Pool { path: config.pool_path.clone(), reason: e.to_string() })?;
        AppState::load(&config.db_root, &pools, config.timeout, config.max_concurrent)
    }

    fn run(&self, endpoint: &RestEndpoint, args: &Map<String, Value>) -> Result<Value, EndpointError> {
        let pool = self.dbs.get(&endpoint.db).ok_or(EndpointError::Execution)?;
        let conn = pool.take().map_err(|_| EndpointError::Execution)?;
        let out = execute(&conn, endpoint, args);
        pool.give(conn);
        out
    }
}

fn error(status: StatusCode, kind: &str, detail: String) -> Response {
    (status, Json(json!({"error": kind, "detail": detail}))).into_response()
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn spec(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(state.spec.clone())
}

async fn dispatch(
    State(state): State<Arc<AppState>>,
    method: Method,
    uri: Uri,
    Query(query): Query<Vec<(String, String)>>,
) -> Response {
    let path = uri.path().to_string();
    let Some(endpoint) = state.endpoints.get(&path).cloned() else {
        return error(StatusCode::NOT_FOUND, "NotFound", format!("no endpoint at {path}"));
    };
    if method != Method::GET {
        return error(StatusCode::METHOD_NOT_ALLOWED, "MethodNotAllowed", format!("{method} is not supported"));
    }
    let args: Map<String, Value> = query.into_iter().map(|(k, v)| (k, Value::String(v))).collect();
    let Ok(_permit) = state.limit.acquire().await else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "Unavailable", "shutting down".into());
    };
    let worker = {
        let state = state.clone();
        tokio::task::spawn_blocking(move || state.run(&endpoint, &args))
    };
    match tokio::time::timeout(state.timeout, worker).await {
        Err(_) => error(StatusCode::GATEWAY_TIMEOUT, "Timeout", "request timed out".into()),
        Ok(Err(_)) => error(StatusCode::INTERNAL_SERVER_ERROR, "ExecutionError", "query execution failed".into()),
        Ok(Ok(Ok(body))) => Json(body).into_response(),
        Ok(Ok(Err(e))) => {
            let status = StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (status, Json(e.to_json())).into_response()
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/spec", get(spec))
        .fallback(dispatch)
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve_with(
    state: AppState,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    tracing::info!(addr = %listener.local_addr()?, endpoints = state.endpoints.len(), "serving");
    axum::serve(listener, router(Arc::new(state))).with_graceful_shutdown(shutdown).await?;
    Ok(())
}

/// Blocks serving until interrupted (ctrl-c).
pub fn serve(config: &ServiceConfig) -> Result<(), ServeError> {
    let state = AppState::from_config(config)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(config.bind).await?;
        serve_with(state, listener, async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        })
        .await
    })
}

/// A server on its own thread; dropped or `stop`ped to shut down.
pub struct RunningServer {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<Result<(), ServeError>>>,
}

impl RunningServer {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) -> Result<(), ServeError> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<(), ServeError> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or(Ok(())),
            None => Ok(()),
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

/// Starts serving in the background and returns once the port is bound.
pub fn spawn(state: AppState, bind: SocketAddr) -> Result<RunningServer, ServeError> {
    let (tx, rx) = oneshot::channel::<()>();
    let (ready_tx, ready_rx) = std::sync::mpsc::channel();
    let thread = std::thread::spawn(move || -> Result<(), ServeError> {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        rt.block_on(async move {
            let listener = match tokio::net::TcpListener::bind(bind).await {
                Ok(l) => l,
                Err(e) => {
                    let _ = ready_tx.send(Err(e.to_string()));
                    return Err(e.into());
                }
            };
            let _ = ready_tx.send(listener.local_addr().map_err(|e| e.to_string()));
            serve_with(state, listener, async {
                let _ = rx.await;
            })
            .await
        })
    });
    match ready_rx.recv() {
        Ok(Ok(addr)) => Ok(RunningServer { addr, stop: Some(tx), thread: Some(thread) }),
        Ok(Err(e)) => Err(ServeError::Io(std::io::Error::other(e))),
        Err(_) => Err(thread.join().unwrap_or(Err(ServeError::NoEndpoints)).err().unwrap_or(ServeError::NoEndpoints)),
    }
}

//! HTTP advisor: load MDPs, open sessions that follow an epsilon-optimal
//! non-deterministic policy, and step through episodes choosing among the
//! suggested actions.
//!
//! Rewards reported by `step` are the pair's expected reward; transitions
//! are sampled from the session's own seeded generator.

pub mod error;
pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use ndp_core::io::parse_mdp;
use ndp_core::{
    conservative_policy, evaluate_worst_case, is_eps_optimal, search_dag, search_full, solve_exact, solve_optimal,
    EpsKind, EpsMode, Mdp, SearchConfig, DEFAULT_TOL,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

pub use error::ApiError;
pub use session::{Algorithm, CachedPolicy, Session, StepOutcome, Suggestions, Transcript, TranscriptEntry};

type PolicyKey = (u64, EpsKind, u64, Algorithm);

#[derive(Default)]
struct Inner {
    mdps: RwLock<HashMap<u64, Arc<Mdp>>>,
    sessions: RwLock<HashMap<u64, Arc<Mutex<Session>>>>,
    policies: Mutex<HashMap<PolicyKey, Arc<CachedPolicy>>>,
    next_mdp: AtomicU64,
    next_session: AtomicU64,
}

/// Shared service state. MDPs and cached policies are immutable once
/// stored; each session sits behind its own lock.
#[derive(Clone, Default)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_mdp(&self, mdp: Mdp) -> u64 {
        let id = self.inner.next_mdp.fetch_add(1, Ordering::Relaxed) + 1;
        self.inner.mdps.write().expect("mdp map lock").insert(id, Arc::new(mdp));
        id
    }

    fn mdp(&self, id: u64) -> Result<Arc<Mdp>, ApiError> {
        self.inner
            .mdps
            .read()
            .expect("mdp map lock")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("MDP", &id.to_string()))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        id.parse::<u64>()
            .ok()
            .and_then(|n| self.inner.sessions.read().expect("session map lock").get(&n).cloned())
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    /// Computes the policy for `(mdp, eps, algorithm)` once and caches it.
    pub fn policy(&self, mdp_id: u64, eps: EpsMode, algorithm: Algorithm) -> Result<Arc<CachedPolicy>, ApiError> {
        let key = (mdp_id, eps.kind, eps.epsilon.to_bits(), algorithm);
        if let Some(found) = self.inner.policies.lock().expect("policy cache lock").get(&key) {
            return Ok(found.clone());
        }
        let mdp = self.mdp(mdp_id)?;
        let computed = Arc::new(compute_policy(&mdp, eps, algorithm)?);
        let mut cache = self.inner.policies.lock().expect("policy cache lock");
        Ok(cache.entry(key).or_insert(computed).clone())
    }

    pub fn create_session(&self, req: &CreateSession) -> Result<u64, ApiError> {
        let mdp = self.mdp(req.mdp_id)?;
        let eps = EpsMode::new(req.eps_mode, req.epsilon)?;
        if req.start_state >= mdp.n_states() {
            return Err(ApiError::bad_request(format!(
                "start_state {} out of range for {} states",
                req.start_state,
                mdp.n_states()
            )));
        }
        if req.horizon == 0 {
            return Err(ApiError::bad_request("horizon must be at least 1"));
        }
        let cached = self.policy(req.mdp_id, eps, req.algorithm)?;
        let id = self.inner.next_session.fetch_add(1, Ordering::Relaxed) + 1;
        let session = Session::new(id, req.mdp_id, mdp, cached, req.start_state, req.horizon, req.seed);
        self.inner.sessions.write().expect("session map lock").insert(id, Arc::new(Mutex::new(session)));
        Ok(id)
    }
}

/// Runs the chosen algorithm and evaluates the result from a cold start, so
/// values match an offline evaluation of the same policy.
pub fn compute_policy(mdp: &Mdp, eps: EpsMode, algorithm: Algorithm) -> Result<CachedPolicy, ApiError> {
    let sol = solve_optimal(mdp, DEFAULT_TOL)?;
    let cfg = SearchConfig::new(eps);
    let policy = match algorithm {
        Algorithm::Conservative => conservative_policy(mdp, eps, &sol.value, DEFAULT_TOL)?,
        Algorithm::SearchFull => search_full(mdp, &cfg)?.policy,
        Algorithm::SearchDag => search_dag(mdp, &cfg)?.policy,
        Algorithm::Exact => solve_exact(mdp, eps, None, None)?.policy,
    };
    if !is_eps_optimal(mdp, &policy, eps, &sol.value, DEFAULT_TOL)? {
        return Err(ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal",
            "computed policy failed the epsilon check",
        ));
    }
    let eval = evaluate_worst_case(mdp, &policy, DEFAULT_TOL)?;
    Ok(CachedPolicy { eps, algorithm, policy, eval, vstar: sol.value, qstar: sol.q })
}

fn default_mode() -> EpsKind {
    EpsKind::Multiplicative
}

fn default_algorithm() -> Algorithm {
    Algorithm::SearchFull
}

fn default_horizon() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub mdp_id: u64,
    pub epsilon: f64,
    #[serde(default = "default_mode")]
    pub eps_mode: EpsKind,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub start_state: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRequest {
    pub action: usize,
    #[serde(default)]
    pub allow_override: bool,
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

async fn post_mdp(State(app): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let text = std::str::from_utf8(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let mdp = parse_mdp(text)?;
    let summary = json!({ "name": mdp.name(), "states": mdp.n_states(), "pairs": mdp.n_pairs() });
    let id = app.add_mdp(mdp);
    let mut out = summary;
    out["id"] = json!(id);
    Ok((StatusCode::CREATED, Json(out)))
}

async fn post_session(State(app): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let req: CreateSession = parse_body(&body)?;
    let worker = app.clone();
    let id = tokio::task::spawn_blocking(move || worker.create_session(&req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let session = app.session(&id.to_string())?;
    let session = session.lock().expect("session lock");
    let policy = session.policy();
    Ok((StatusCode::CREATED, Json(json!({ "id": id, "sets": policy.sets(), "size": policy.size() }))))
}

async fn get_suggestions(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Suggestions>, ApiError> {
    let session = app.session(&id)?;
    let session = session.lock().expect("session lock");
    Ok(Json(session.suggestions()?))
}

async fn post_step(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<StepOutcome>, ApiError> {
    let req: StepRequest = parse_body(&body)?;
    let session = app.session(&id)?;
    let mut session = session.lock().expect("session lock");
    Ok(Json(session.step(req.action, req.allow_override)?))
}

async fn get_transcript(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Transcript>, ApiError> {
    let session = app.session(&id)?;
    let session = session.lock().expect("session lock");
    Ok(Json(session.transcript()))
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

/// All routes. `ui_dir`, when given, is served under `/ui/`.
pub fn router(app: AppState, ui_dir: Option<PathBuf>) -> Router {
    let mut router = Router::new()
        .route("/mdps", post(post_mdp))
        .route("/sessions", post(post_session))
        .route("/sessions/{id}/suggestions", get(get_suggestions))
        .route("/sessions/{id}/step", post(post_step))
        .route("/sessions/{id}/transcript", get(get_transcript));
    if let Some(dir) = ui_dir {
        router = router.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true));
    }
    router.fallback(fallback).with_state(app)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(), ui_dir)).await
}

/// Blocking wrapper around [`serve`] with its own runtime.
pub fn serve_blocking(addr: SocketAddr, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build()?.block_on(serve(addr, ui_dir))
}

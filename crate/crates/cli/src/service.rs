//! HTTP service: sessions over the explanation engine, one JSON snapshot
//! per session on disk.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use mmapf_core::bundled;
use mmapf_core::explain::{ExplainError, Session, SessionConfig};
use mmapf_core::model::{instance_from_value, instance_to_value, plan_from_value, plan_to_value, LoadOptions};
use mmapf_core::queries::{parse_query, query_from_value, Query};
use mmapf_core::solver::{SearchMode, SolveConfig};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Where session snapshots are kept; None keeps them in memory only.
    pub data_dir: Option<PathBuf>,
    /// Anytime budget in seconds for solves that do not give one.
    pub default_anytime: Option<f64>,
    /// Queries still running after this return 202 and a job token.
    pub async_after: Duration,
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data_dir: None,
            default_anytime: None,
            async_after: Duration::from_secs(2),
            cors_origin: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SessionRecord {
    id: String,
    created: u64,
    updated: u64,
    session: Session,
}

struct Slot {
    record: Mutex<SessionRecord>,
    /// Set while a query or another mutation owns the session.
    busy: AtomicBool,
}

impl Slot {
    fn claim(&self) -> Result<BusyGuard<'_>, ApiError> {
        self.busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map(|_| BusyGuard(&self.busy))
            .map_err(|_| ApiError::new(StatusCode::CONFLICT, "session is busy with another request"))
    }

    fn snapshot(&self) -> SessionRecord {
        self.record.lock().expect("session lock").clone()
    }
}

struct BusyGuard<'a>(&'a AtomicBool);

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

enum Job {
    Running,
    Done(StatusCode, Value),
}

pub struct AppState {
    cfg: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    jobs: Mutex<HashMap<String, Job>>,
}

impl AppState {
    /// Builds the state, reloading every snapshot found in the data directory.
    pub fn open(cfg: ServiceConfig) -> anyhow::Result<Arc<AppState>> {
        let mut sessions = HashMap::new();
        if let Some(dir) = &cfg.data_dir {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            for entry in fs::read_dir(dir)? {
                let path = entry?.path();
                if path.extension().is_none_or(|e| e != "json") {
                    continue;
                }
                let text = fs::read_to_string(&path)?;
                let rec: SessionRecord =
                    serde_json::from_str(&text).with_context(|| format!("loading {}", path.display()))?;
                sessions.insert(
                    rec.id.clone(),
                    Arc::new(Slot {
                        record: Mutex::new(rec),
                        busy: AtomicBool::new(false),
                    }),
                );
            }
        }
        Ok(Arc::new(AppState {
            cfg,
            sessions: RwLock::new(sessions),
            jobs: Mutex::new(HashMap::new()),
        }))
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))
    }

    fn persist(&self, rec: &SessionRecord) -> Result<(), ApiError> {
        let Some(dir) = &self.cfg.data_dir else {
            return Ok(());
        };
        let write = || -> std::io::Result<()> {
            let tmp = dir.join(format!("{}.json.tmp", rec.id));
            fs::write(&tmp, serde_json::to_vec_pretty(rec)?)?;
            fs::rename(&tmp, dir.join(format!("{}.json", rec.id)))
        };
        write().map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("saving session: {e}")))
    }

    fn solve_config(&self, anytime: Option<f64>) -> Result<SolveConfig, ApiError> {
        match anytime.or(self.cfg.default_anytime) {
            None => Ok(SolveConfig::exact()),
            Some(s) if s.is_finite() && s >= 0.0 => Ok(SolveConfig::anytime(Duration::from_secs_f64(s))),
            Some(s) => Err(ApiError::bad_request(format!("invalid anytime budget {s}"))),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, message)
    }

    fn body(&self) -> Value {
        json!({ "error": self.message })
    }
}

impl From<ExplainError> for ApiError {
    fn from(e: ExplainError) -> Self {
        let status = match e {
            ExplainError::PremiseNotObserved(_) | ExplainError::NoPlan => StatusCode::UNPROCESSABLE_ENTITY,
            ExplainError::EmptyHistory => StatusCode::CONFLICT,
            ExplainError::Query(_) | ExplainError::Solve(_) | ExplainError::Model(_) | ExplainError::InvalidPlan(_) => {
                StatusCode::BAD_REQUEST
            }
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))
}

fn session_view(rec: &SessionRecord) -> Value {
    let s = &rec.session;
    json!({
        "session_id": rec.id,
        "created": rec.created,
        "updated": rec.updated,
        "instance": instance_to_value(&s.instance),
        "plan": s.current_plan.as_ref().map(plan_to_value),
        "solvable": s.is_solvable(),
        "accumulated": s.accumulated,
        "history_len": s.history.len(),
        "config": s.config,
    })
}

pub fn router(state: Arc<AppState>) -> Router {
    let origin = match &state.cfg.cors_origin {
        Some(o) => HeaderValue::from_str(o).map(AllowOrigin::exact).unwrap_or_else(|_| AllowOrigin::from(Any)),
        None => AllowOrigin::from(Any),
    };
    let cors = CorsLayer::new().allow_origin(origin).allow_methods(Any).allow_headers(Any);
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/query", post(query))
        .route("/api/sessions/{id}/history", get(history))
        .route("/api/sessions/{id}/pop", post(pop))
        .route("/api/sessions/{id}/reset", post(reset))
        .route("/api/instances/examples", get(examples))
        .route("/api/jobs/{token}", get(job))
        .layer(cors)
        .with_state(state)
}

pub async fn serve(bind: &str, cfg: ServiceConfig) -> anyhow::Result<()> {
    let state = AppState::open(cfg)?;
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .with_context(|| format!("binding {bind}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    instance: Value,
    #[serde(default)]
    plan: Option<Value>,
    #[serde(default)]
    anytime: Option<f64>,
    #[serde(default)]
    accumulate_unsat: bool,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let body: CreateBody = parse_body(&body)?;
    let inst = instance_from_value(body.instance, LoadOptions::default())
        .map_err(|e| ApiError::bad_request(format!("invalid instance: {e}")))?;
    let plan = body
        .plan
        .map(|p| plan_from_value(p, &inst))
        .transpose()
        .map_err(|e| ApiError::bad_request(format!("invalid plan: {e}")))?;
    let config = SessionConfig {
        solve: state.solve_config(body.anytime)?,
        accumulate_unsat: body.accumulate_unsat,
    };
    let (session, solved) = blocking(move || Session::start(inst, plan, config)).await??;
    let t = now();
    let rec = SessionRecord {
        id: uuid::Uuid::new_v4().to_string(),
        created: t,
        updated: t,
        session,
    };
    state.persist(&rec)?;
    let mut out = json!({
        "session_id": rec.id,
        "plan": rec.session.current_plan.as_ref().map(plan_to_value),
        "status": solved.as_ref().map_or("given", |r| r.outcome.status()),
    });
    if let Some(r) = &solved {
        out["stats"] = json!(r.stats);
        if let Some(sol) = r.outcome.solution() {
            out["cost"] = json!(sol.cost);
        }
    }
    let status = if rec.session.is_solvable() {
        StatusCode::OK
    } else {
        out["error"] = json!("the instance has no plan; only QU can be asked");
        StatusCode::UNPROCESSABLE_ENTITY
    };
    state.sessions.write().expect("sessions lock").insert(
        rec.id.clone(),
        Arc::new(Slot {
            record: Mutex::new(rec),
            busy: AtomicBool::new(false),
        }),
    );
    Ok((status, Json(out)).into_response())
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let rec = state.slot(&id)?.snapshot();
    Ok(Json(session_view(&rec)).into_response())
}

async fn history(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let rec = state.slot(&id)?.snapshot();
    Ok(Json(json!({ "session_id": rec.id, "history": rec.session.history })).into_response())
}

fn mutate(state: &AppState, id: &str, f: impl FnOnce(&mut Session) -> Result<Value, ExplainError>) -> ApiResult {
    let slot = state.slot(id)?;
    let _guard = slot.claim()?;
    let mut rec = slot.snapshot();
    let extra = f(&mut rec.session)?;
    rec.updated = now();
    state.persist(&rec)?;
    let mut out = session_view(&rec);
    if let (Value::Object(o), Value::Object(e)) = (&mut out, extra) {
        o.extend(e);
    }
    *slot.record.lock().expect("session lock") = rec;
    Ok(Json(out).into_response())
}

async fn pop(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    mutate(&state, &id, |s| Ok(json!({ "popped": s.pop()? })))
}

async fn reset(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    mutate(&state, &id, |s| {
        s.reset();
        Ok(json!({}))
    })
}

async fn examples() -> ApiResult {
    let mut out = Vec::new();
    for ex in bundled::EXAMPLES {
        let (inst, plan) = ex
            .load()
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        out.push(json!({
            "name": ex.name,
            "description": ex.description,
            "instance": instance_to_value(&inst),
            "plan": plan.as_ref().map(plan_to_value),
        }));
    }
    Ok(Json(out).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryBody {
    /// JSON object or shorthand string.
    query: Value,
    #[serde(default)]
    anytime: Option<f64>,
}

fn read_query(v: Value) -> Result<Query, ApiError> {
    let q = match v {
        Value::String(s) => parse_query(&s),
        other => query_from_value(other),
    };
    q.map_err(|e| ApiError::bad_request(e.to_string()))
}

/// Answers a query on its own thread and writes the session back. The
/// session stays claimed until the answer is stored.
fn answer(state: &AppState, slot: &Slot, q: &Query, mode: Option<SearchMode>) -> (StatusCode, Value) {
    let mut rec = slot.snapshot();
    let saved = rec.session.config.solve.mode;
    if let Some(m) = mode {
        rec.session.config.solve.mode = m;
    }
    let res = rec.session.answer(q);
    rec.session.config.solve.mode = saved;
    let result = res.map_err(ApiError::from).and_then(|e| {
        rec.updated = now();
        state.persist(&rec)?;
        let out = json!({
            "session_id": rec.id,
            "explanation": e,
            "plan": rec.session.current_plan.as_ref().map(plan_to_value),
            "accumulated": rec.session.accumulated,
            "history_len": rec.session.history.len(),
        });
        *slot.record.lock().expect("session lock") = rec;
        Ok(out)
    });
    match result {
        Ok(v) => (StatusCode::OK, v),
        Err(e) => (e.status, e.body()),
    }
}

async fn query(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let slot = state.slot(&id)?;
    let body: QueryBody = parse_body(&body)?;
    let q = read_query(body.query)?;
    let mode = match (body.anytime, state.cfg.default_anytime) {
        (None, None) => None,
        (a, _) => Some(state.solve_config(a)?.mode),
    };
    slot.claim().map(std::mem::forget)?;
    let (st, sl) = (state.clone(), slot.clone());
    let mut work = tokio::task::spawn_blocking(move || {
        let out = answer(&st, &sl, &q, mode);
        sl.busy.store(false, Ordering::Release);
        out
    });
    let worker_failed = |e: tokio::task::JoinError| {
        slot.busy.store(false, Ordering::Release);
        (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": format!("worker failed: {e}") }))
    };
    match tokio::time::timeout(state.cfg.async_after, &mut work).await {
        Ok(done) => {
            let (status, v) = done.unwrap_or_else(worker_failed);
            Ok((status, Json(v)).into_response())
        }
        Err(_) => {
            let token = uuid::Uuid::new_v4().to_string();
            state.jobs.lock().expect("jobs lock").insert(token.clone(), Job::Running);
            let (st, tok) = (state.clone(), token.clone());
            tokio::spawn(async move {
                let (status, v) = work.await.unwrap_or_else(|e| {
                    slot.busy.store(false, Ordering::Release);
                    (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": format!("worker failed: {e}") }))
                });
                st.jobs.lock().expect("jobs lock").insert(tok, Job::Done(status, v));
            });
            let body = json!({ "status": "running", "token": token, "poll": format!("/api/jobs/{token}") });
            Ok((StatusCode::ACCEPTED, Json(body)).into_response())
        }
    }
}

async fn job(State(state): State<Arc<AppState>>, Path(token): Path<String>) -> ApiResult {
    let jobs = state.jobs.lock().expect("jobs lock");
    match jobs.get(&token) {
        None => Err(ApiError::new(StatusCode::NOT_FOUND, format!("no job {token}"))),
        Some(Job::Running) => Ok(Json(json!({ "status": "running", "token": token })).into_response()),
        Some(Job::Done(code, v)) => Ok(Json(json!({
            "status": "done",
            "token": token,
            "code": code.as_u16(),
            "result": v,
        }))
        .into_response()),
    }
}

//! Live annotation service: one active-learning session per id, driven by a
//! human over JSON/HTTP. All ids on the wire are 1-based.
//!
//! Each session sits behind its own mutex, so requests to a session are
//! applied one at a time and readers see the last committed state. With a
//! journal directory, every answer is appended to `<id>.log.csv` before the
//! response is sent and the model is checkpointed to `<id>.model.txt` on
//! the checkpoint grid; reopening the service replays the journal.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crowdal::eval::CurvePoint;
use crowdal::*;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub method: Method,
    pub seed: u64,
    /// One session per id; the first is the default.
    pub session_ids: Vec<String>,
    pub journal_dir: Option<PathBuf>,
}

struct Journal {
    log: File,
    model_path: PathBuf,
}

pub struct LiveSession {
    id: String,
    session: ActiveSession<'static>,
    journal: Option<Journal>,
}

impl LiveSession {
    fn open(ds: &'static Dataset, settings: &RunSettings, method: Method, seed: u64, id: &str, dir: Option<&Path>) -> anyhow::Result<Self> {
        let split = DataSplit::new(ds.len(), settings.fractions, seed)?;
        let log_path = dir.map(|d| d.join(format!("{id}.log.csv")));
        let previous = match &log_path {
            Some(p) if p.exists() => {
                let text = fs::read_to_string(p).with_context(|| format!("cannot read journal {}", p.display()))?;
                Some(AnnotationStore::parse_log_csv(&text).with_context(|| format!("corrupt journal {}", p.display()))?)
            }
            _ => None,
        };
        let session = match previous {
            Some(records) => {
                let n = records.len();
                let script = records
                    .into_iter()
                    .map(|r| (QueryTriple::new(r.instance, r.label, r.annotator), r.value))
                    .collect();
                let mut channel = ScriptedChannel::new(script);
                let mut session = ActiveSession::new(ds, split, method, settings.clone(), seed, &mut channel)?;
                while channel.remaining() > 0 {
                    if !session.step(&mut channel)? {
                        anyhow::bail!("journal for session {id} has more records than the session accepts");
                    }
                }
                log::info!("session {id}: resumed from {n} journal records, {} queries", session.queries());
                session
            }
            None => {
                let mut sim = build_simulators(ds, settings.n_annotators, settings.lambda, seed, settings.mode)?;
                ActiveSession::new(ds, split, method, settings.clone(), seed, &mut sim)?
            }
        };
        let journal = match (dir, log_path) {
            (Some(dir), Some(log_path)) => {
                fs::create_dir_all(dir)?;
                if !log_path.exists() {
                    fs::write(&log_path, session.store().to_log_csv())?;
                }
                Some(Journal {
                    log: OpenOptions::new().append(true).open(&log_path)?,
                    model_path: dir.join(format!("{id}.model.txt")),
                })
            }
            _ => None,
        };
        Ok(LiveSession {
            id: id.to_string(),
            session,
            journal,
        })
    }

    fn commit(&mut self) -> anyhow::Result<()> {
        let Some(journal) = &mut self.journal else {
            return Ok(());
        };
        if let Some(rec) = self.session.store().records().last() {
            journal.log.write_all(rec.log_line().as_bytes())?;
            journal.log.flush()?;
        }
        let s = &self.session;
        if s.queries().is_multiple_of(s.settings().checkpoint_every) {
            if let Some(model) = s.model() {
                model.save(&journal.model_path)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<BTreeMap<String, Arc<Mutex<LiveSession>>>>,
    default_id: String,
}

impl AppState {
    /// Opens every configured session, resuming from journals when present.
    pub fn open(ds: &'static Dataset, settings: &RunSettings, opts: &ServeOptions) -> anyhow::Result<Self> {
        let ids = if opts.session_ids.is_empty() {
            vec!["default".to_string()]
        } else {
            opts.session_ids.clone()
        };
        let mut sessions = BTreeMap::new();
        for (k, id) in ids.iter().enumerate() {
            if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                anyhow::bail!("session id {id:?} must be non-empty and use only letters, digits, - and _");
            }
            let live = LiveSession::open(ds, settings, opts.method, opts.seed + k as u64, id, opts.journal_dir.as_deref())?;
            if sessions.insert(id.clone(), Arc::new(Mutex::new(live))).is_some() {
                anyhow::bail!("duplicate session id {id:?}");
            }
        }
        Ok(AppState {
            sessions: Arc::new(sessions),
            default_id: ids[0].clone(),
        })
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/state", get(state_handler))
        .route("/api/query/next", get(next_handler))
        .route("/api/annotate", post(annotate_handler))
        .route("/api/annotators", get(annotators_handler))
        .route("/api/curve", get(curve_handler))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    pending: Option<TripleDoc>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            pending: None,
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pending: Option<TripleDoc>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code,
            message: &self.message,
            pending: self.pending,
        };
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct SessionParam {
    session: Option<String>,
}

async fn with_session<T, F>(state: &AppState, param: &SessionParam, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut LiveSession) -> Result<T, ApiError> + Send + 'static,
{
    let id = param.session.as_deref().unwrap_or(&state.default_id);
    let live = state
        .sessions
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id:?}")))?;
    tokio::task::spawn_blocking(move || {
        let mut guard = live.lock().map_err(|_| ApiError::internal("session state is poisoned"))?;
        f(&mut guard)
    })
    .await
    .map_err(ApiError::internal)?
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct TripleDoc {
    pub instance_id: usize,
    pub label_id: usize,
    pub annotator_id: usize,
}

impl From<QueryTriple> for TripleDoc {
    fn from(q: QueryTriple) -> Self {
        TripleDoc {
            instance_id: q.instance + 1,
            label_id: q.label + 1,
            annotator_id: q.annotator + 1,
        }
    }
}

#[derive(Debug, Serialize)]
struct QueryDoc {
    instance_id: usize,
    label_id: usize,
    annotator_id: usize,
    label_name: String,
    instance_name: Option<String>,
    features: Vec<f64>,
    code: Option<Vec<f64>>,
    queries: usize,
    budget: usize,
}

async fn next_handler(State(state): State<AppState>, Query(param): Query<SessionParam>) -> Result<Response, ApiError> {
    with_session(&state, &param, |live| {
        let s = &mut live.session;
        let Some(q) = s.next_query().map_err(ApiError::internal)? else {
            return Ok(StatusCode::NO_CONTENT.into_response());
        };
        let ds = s.dataset();
        let doc = QueryDoc {
            instance_id: q.instance + 1,
            label_id: q.label + 1,
            annotator_id: q.annotator + 1,
            label_name: ds.label_names()[q.label].clone(),
            instance_name: ds.names().map(|n| n[q.instance].clone()),
            features: ds.features(q.instance).to_vec(),
            code: s.table().code(q.instance).map(<[f64]>::to_vec),
            queries: s.queries(),
            budget: s.budget(),
        };
        Ok(Json(doc).into_response())
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotateBody {
    instance_id: i64,
    label_id: i64,
    annotator_id: i64,
    value: serde_json::Value,
}

#[derive(Debug, Serialize)]
struct AnnotateDoc {
    queries: usize,
    budget: usize,
    finished: bool,
}

fn parse_value(v: &serde_json::Value) -> Option<Bipolar> {
    match v {
        serde_json::Value::Number(n) => match n.as_i64() {
            Some(1) => Some(Bipolar::Pos),
            Some(-1) => Some(Bipolar::Neg),
            _ => None,
        },
        serde_json::Value::String(s) => s.parse().ok(),
        _ => None,
    }
}

fn to_index(id: i64, bound: usize, what: &str) -> Result<usize, ApiError> {
    if id < 1 || id as u64 > bound as u64 {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "out_of_range",
            format!("{what} {id} is outside 1..={bound}"),
        ));
    }
    Ok(id as usize - 1)
}

async fn annotate_handler(
    State(state): State<AppState>,
    Query(param): Query<SessionParam>,
    body: Bytes,
) -> Result<Json<AnnotateDoc>, ApiError> {
    let req: AnnotateBody = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_request", e.to_string()))?;
    let value = parse_value(&req.value).ok_or_else(|| {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_value", format!("value must be +1 or -1, got {}", req.value))
    })?;
    with_session(&state, &param, move |live| {
        let s = &mut live.session;
        let ds = s.dataset();
        let q = QueryTriple::new(
            to_index(req.instance_id, ds.len(), "instance_id")?,
            to_index(req.label_id, ds.n_labels(), "label_id")?,
            to_index(req.annotator_id, s.settings().n_annotators, "annotator_id")?,
        );
        let Some(pending) = s.next_query().map_err(ApiError::internal)? else {
            return Err(ApiError::new(StatusCode::CONFLICT, "session_finished", "no query is pending; the session is finished"));
        };
        match s.record(q, value) {
            Ok(()) => {}
            Err(SessionError::Conflict { .. }) => {
                let mut e = ApiError::new(StatusCode::CONFLICT, "stale_query", "the annotation does not match the pending query");
                e.pending = Some(pending.into());
                return Err(e);
            }
            Err(e @ SessionError::AlreadyAnswered(_)) => {
                let mut e = ApiError::new(StatusCode::CONFLICT, "already_answered", e.to_string());
                e.pending = Some(pending.into());
                return Err(e);
            }
            Err(e) => return Err(ApiError::internal(e)),
        }
        live.commit().map_err(ApiError::internal)?;
        let s = &live.session;
        log::debug!("session {}: recorded query {}", live.id, s.queries());
        Ok(Json(AnnotateDoc {
            queries: s.queries(),
            budget: s.budget(),
            finished: s.is_finished(),
        }))
    })
    .await
}

#[derive(Debug, Serialize)]
struct AnnotatorExpertise {
    annotator_id: usize,
    mean_expertise: Option<f64>,
}

#[derive(Debug, Serialize)]
struct StateDoc {
    session_id: String,
    method: Method,
    seed: u64,
    queries: usize,
    budget: usize,
    finished: bool,
    pending: Option<TripleDoc>,
    curve: Vec<CurvePoint>,
    annotators: Vec<AnnotatorExpertise>,
}

async fn state_handler(State(state): State<AppState>, Query(param): Query<SessionParam>) -> Result<Json<StateDoc>, ApiError> {
    with_session(&state, &param, |live| {
        let s = &live.session;
        let pending = s.pending();
        let means = match pending {
            Some(q) => s.mean_expertise(q.label).map_err(ApiError::internal)?,
            None => None,
        };
        let annotators = (0..s.settings().n_annotators)
            .map(|j| AnnotatorExpertise {
                annotator_id: j + 1,
                mean_expertise: means.as_ref().map(|m| m[j]),
            })
            .collect();
        Ok(Json(StateDoc {
            session_id: live.id.clone(),
            method: s.method(),
            seed: s.seed(),
            queries: s.queries(),
            budget: s.budget(),
            finished: s.is_finished(),
            pending: pending.map(Into::into),
            curve: s.curve().to_vec(),
            annotators,
        }))
    })
    .await
}

#[derive(Debug, Serialize)]
struct AnnotatorSummary {
    annotator_id: usize,
    answered: usize,
    /// Mean expertise over the pool, one entry per label; absent for
    /// majority-vote strategies.
    mean_expertise_by_label: Option<Vec<f64>>,
}

async fn annotators_handler(
    State(state): State<AppState>,
    Query(param): Query<SessionParam>,
) -> Result<Json<Vec<AnnotatorSummary>>, ApiError> {
    with_session(&state, &param, |live| {
        let s = &live.session;
        let m = s.settings().n_annotators;
        let mut answered = vec![0usize; m];
        for r in s.store().records() {
            answered[r.annotator] += 1;
        }
        let mut by_label: Option<Vec<Vec<f64>>> = None;
        for l in 0..s.dataset().n_labels() {
            if let Some(means) = s.mean_expertise(l).map_err(ApiError::internal)? {
                by_label.get_or_insert_with(|| vec![Vec::new(); m]);
                for (j, v) in means.into_iter().enumerate() {
                    by_label.as_mut().expect("initialised above")[j].push(v);
                }
            }
        }
        Ok(Json(
            (0..m)
                .map(|j| AnnotatorSummary {
                    annotator_id: j + 1,
                    answered: answered[j],
                    mean_expertise_by_label: by_label.as_ref().map(|b| b[j].clone()),
                })
                .collect(),
        ))
    })
    .await
}

#[derive(Debug, Serialize)]
struct CurveDoc {
    method: Method,
    seed: u64,
    points: Vec<CurvePoint>,
}

async fn curve_handler(State(state): State<AppState>, Query(param): Query<SessionParam>) -> Result<Json<CurveDoc>, ApiError> {
    with_session(&state, &param, |live| {
        let s = &live.session;
        Ok(Json(CurveDoc {
            method: s.method(),
            seed: s.seed(),
            points: s.curve().to_vec(),
        }))
    })
    .await
}

/// Runs the service until Ctrl-C.
pub async fn serve(state: AppState, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .with_context(|| format!("cannot bind {bind}"))?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

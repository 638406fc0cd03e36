//! HTTP façade over the engine and the session store.
//!
//! Turns run on the blocking pool; reads see the last committed snapshot.

mod config;
mod views;

pub use config::{ConfigError, EngineSection, GroundingMode, GroundingSection, ProviderMode, ProviderSection, ServiceConfig};
pub use views::{AgentView, EntryView, IndexView, MessageView, SpanView, StateView, TranscriptView, TurnView};

use crate::engine::{Engine, EngineError, SessionHandle, TurnEvent, UserTurnInput};
use crate::ids::MessageId;
use crate::store::{FileStore, HallucinationLabel, KeywordKind, PinKind, Session, SessionConfig, StoreError};
use axum::body::Body;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use tokio_stream::wrappers::UnboundedReceiverStream;
use tokio_stream::StreamExt;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn status(&self) -> StatusCode {
        self.status
    }

    fn body(&self) -> serde_json::Value {
        json!({"error": self.code, "message": self.message})
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownKey(_) | StoreError::UnknownMessage(_) | StoreError::NotFound(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string())
            }
            StoreError::UnknownKind(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_kind", e.to_string()),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string()),
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Busy => ApiError::new(StatusCode::CONFLICT, "busy", e.to_string()),
            EngineError::InvalidInput(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_input", e.to_string()),
            EngineError::Provider(_) => ApiError::new(StatusCode::BAD_GATEWAY, "provider", e.to_string()),
            EngineError::RetriesExhausted { .. } => {
                ApiError::new(StatusCode::BAD_GATEWAY, "retries_exhausted", e.to_string())
            }
            EngineError::Store(s) => s.into(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Shared service state: the engine, open sessions, and the document store.
pub struct AppState {
    engine: Engine,
    store: FileStore,
    defaults: SessionConfig,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
}

impl AppState {
    pub fn new(engine: Engine, store: FileStore, defaults: SessionConfig) -> Arc<Self> {
        Arc::new(Self {
            engine,
            store,
            defaults,
            sessions: RwLock::new(HashMap::new()),
        })
    }

    /// Open handle for `id`, loading the stored document on first access.
    pub fn handle(&self, id: &str) -> ApiResult<Arc<SessionHandle>> {
        if let Some(h) = self.sessions.read().expect("sessions lock").get(id) {
            return Ok(h.clone());
        }
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(StoreError::NotFound(id.to_string()).into());
        }
        let session = self.store.load(id)?;
        let mut sessions = self.sessions.write().expect("sessions lock");
        Ok(sessions
            .entry(id.to_string())
            .or_insert_with(|| Arc::new(SessionHandle::new(session)))
            .clone())
    }

    fn save(&self, handle: &SessionHandle) -> ApiResult<()> {
        self.store.save(&handle.read())?;
        Ok(())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/transcript", get(get_transcript))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/messages/{message_id}/labels", post(post_label))
        .route("/sessions/{id}/pins", post(post_pin))
        .route("/sessions/{id}/pins/{kind}/{key}", delete(delete_pin))
        .route("/sessions/{id}/visibility", post(post_visibility))
        .route("/sessions/{id}/associations", get(get_associations))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .with_state(state)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    domain_hint: Option<String>,
}

#[derive(Debug, Serialize)]
struct Created {
    session_id: String,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Option<Json<CreateBody>>,
) -> ApiResult<(StatusCode, Json<Created>)> {
    let mut config = state.defaults.clone();
    if let Some(Json(CreateBody { domain_hint: Some(hint) })) = body {
        config.domain_hint = Some(hint);
    }
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session::new(id.clone(), state.engine.now_ms(), config);
    state.store.save(&session)?;
    state
        .sessions
        .write()
        .expect("sessions lock")
        .insert(id.clone(), Arc::new(SessionHandle::new(session)));
    Ok((StatusCode::CREATED, Json(Created { session_id: id })))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<StateView>> {
    let handle = state.handle(&id)?;
    let view = StateView::new(&handle.read());
    Ok(Json(view))
}

#[derive(Debug, Default, Deserialize)]
struct TranscriptQuery {
    #[serde(default)]
    audit: bool,
}

async fn get_transcript(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<TranscriptQuery>,
) -> ApiResult<Json<TranscriptView>> {
    let handle = state.handle(&id)?;
    let view = TranscriptView::new(&handle.read(), q.audit);
    Ok(Json(view))
}

#[derive(Debug, Default, Deserialize)]
struct MessageQuery {
    #[serde(default)]
    stream: bool,
}

fn run_and_save(state: &AppState, handle: &SessionHandle, input: &UserTurnInput, observer: &dyn crate::engine::TurnObserver) -> ApiResult<TurnView> {
    let result = handle.run_turn(&state.engine, input, observer)?;
    state.save(handle)?;
    Ok(TurnView::new(&handle.read(), &result))
}

async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<MessageQuery>,
    body: Result<Json<UserTurnInput>, JsonRejection>,
) -> ApiResult<Response> {
    let handle = state.handle(&id)?;
    let Json(input) = body?;
    if handle.is_busy() {
        return Err(EngineError::Busy.into());
    }
    state.engine.check_input(&handle.read(), &input)?;

    if !q.stream {
        let view = tokio::task::spawn_blocking(move || run_and_save(&state, &handle, &input, &()))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
        return Ok(Json(view).into_response());
    }

    // line-delimited JSON: progress events, then one result or error line
    let (tx, rx) = tokio::sync::mpsc::unbounded_channel::<String>();
    tokio::task::spawn_blocking(move || {
        let events = tx.clone();
        let observer = move |event: TurnEvent| {
            let _ = events.send(serde_json::to_string(&event).expect("event serializes"));
        };
        let last = match run_and_save(&state, &handle, &input, &observer) {
            Ok(view) => json!({"event": "result", "result": view}),
            Err(err) => json!({"event": "error", "status": err.status.as_u16(), "error": err.body()}),
        };
        let _ = tx.send(last.to_string());
    });
    let stream = UnboundedReceiverStream::new(rx).map(|line| Ok::<_, std::convert::Infallible>(format!("{line}\n")));
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        Body::from_stream(stream),
    )
        .into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelBody {
    label: HallucinationLabel,
}

async fn post_label(
    State(state): State<Arc<AppState>>,
    Path((id, message_id)): Path<(String, String)>,
    body: Result<Json<LabelBody>, JsonRejection>,
) -> ApiResult<Json<MessageView>> {
    let handle = state.handle(&id)?;
    let Json(body) = body?;
    let mid = parse_message_id(&message_id)?;
    let ts = state.engine.now_ms();
    handle.mutate(|s| s.label_message(mid, body.label, ts))?;
    state.save(&handle)?;
    let s = handle.read();
    let m = s.message(mid).expect("labelled message exists");
    Ok(Json(MessageView::new(m, s.turn_count, false)))
}

fn parse_message_id(raw: &str) -> ApiResult<MessageId> {
    raw.strip_prefix('m')
        .unwrap_or(raw)
        .parse()
        .map(MessageId)
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown message {raw}")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PinBody {
    kind: PinKind,
    key: String,
}

#[derive(Debug, Serialize)]
struct PinView {
    changed: bool,
    preferences: crate::store::PreferenceSpace,
}

async fn post_pin(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<PinBody>, JsonRejection>,
) -> ApiResult<Json<PinView>> {
    let handle = state.handle(&id)?;
    let Json(body) = body?;
    let ts = state.engine.now_ms();
    let changed = handle.mutate(|s| s.pin(body.kind, &body.key, ts))?;
    state.save(&handle)?;
    let preferences = handle.read().preferences.clone();
    Ok(Json(PinView { changed, preferences }))
}

async fn delete_pin(
    State(state): State<Arc<AppState>>,
    Path((id, kind, key)): Path<(String, String, String)>,
) -> ApiResult<Json<PinView>> {
    let handle = state.handle(&id)?;
    let kind: PinKind = kind.parse()?;
    let ts = state.engine.now_ms();
    let changed = handle.mutate(|s| s.unpin(kind, &key, ts))?;
    if !changed {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "not_pinned", format!("{key:?} is not pinned")));
    }
    state.save(&handle)?;
    let preferences = handle.read().preferences.clone();
    Ok(Json(PinView { changed, preferences }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VisibilityBody {
    #[serde(default)]
    kind: Option<PinKind>,
    key: String,
    hidden: bool,
}

#[derive(Debug, Serialize)]
struct VisibilityView {
    entries: Vec<EntryView>,
    hidden_agents: Vec<crate::ids::AgentId>,
}

async fn post_visibility(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<VisibilityBody>, JsonRejection>,
) -> ApiResult<Json<VisibilityView>> {
    let handle = state.handle(&id)?;
    let Json(body) = body?;
    let ts = state.engine.now_ms();
    handle.mutate(|s| s.set_hidden(body.kind, &body.key, body.hidden, ts))?;
    state.save(&handle)?;
    let s = handle.read();
    let entries = match body.kind {
        Some(PinKind::Agent) => Vec::new(),
        other => s
            .index
            .resolve(other.and_then(PinKind::keyword_kind), &body.key)
            .iter()
            .filter_map(|r| s.index.get(r).map(|e| EntryView::new(&r.key, e)))
            .collect(),
    };
    Ok(Json(VisibilityView {
        entries,
        hidden_agents: s.hidden_agents.iter().cloned().collect(),
    }))
}

#[derive(Debug, Deserialize)]
struct AssociationQuery {
    kind: KeywordKind,
    key: String,
}

async fn get_associations(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<AssociationQuery>,
) -> ApiResult<Json<crate::store::Associations>> {
    let handle = state.handle(&id)?;
    let assoc = handle.read().associations(q.kind, &q.key)?;
    Ok(Json(assoc))
}

async fn get_metrics(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<crate::store::Metrics>> {
    let handle = state.handle(&id)?;
    let metrics = handle.read().export_metrics();
    Ok(Json(metrics))
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Builds the service state from a validated config.
pub fn build_state(config: &ServiceConfig, env: &dyn Fn(&str) -> Option<String>) -> Result<Arc<AppState>, ServeError> {
    let engine = config.build_engine(env)?;
    let store = FileStore::open(&config.data_dir)?;
    Ok(AppState::new(engine, store, config.session_config()))
}

/// Binds the configured address and serves until the process exits.
pub async fn serve(config: ServiceConfig) -> Result<(), ServeError> {
    let state = build_state(&config, &|name| std::env::var(name).ok())?;
    let addr = format!("{}:{}", config.bind, config.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|source| ServeError::Bind { addr: addr.clone(), source })?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).await?;
    Ok(())
}

use std::sync::mpsc::Sender;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, Request, State};
use axum::middleware::{self, Next};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, oneshot};
use uuid::Uuid;

use abc_core::arm::{ArmError, JointVector};
use abc_core::control::{ControlError, Controller, LibraryChange};
use abc_core::memory::{ActionClip, MemoryError, INIT_ACTION};
use abc_core::playback::PlaybackError;
use abc_core::recommend::{request_recommendation, RecommendError, RecommendationRequest, MIN_SUGGESTIONS};
use abc_core::safety::{LockReason, SafetyError, UnlockSource};

use crate::config::InputSettings;
use crate::control_loop::Job;
use crate::session::{safety_payload, Event, RecommendationStatus, Shared};

const MAX_IMAGE_BYTES: usize = 16 * 1024 * 1024;
const COMMAND_TIMEOUT: Duration = Duration::from_secs(2);

/// Which interface a listener serves. The port is the privilege boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Clone)]
pub(crate) struct AppState {
    pub shared: Arc<Shared>,
    pub commands: Sender<Job>,
}

#[derive(Clone)]
struct PortState {
    role: Role,
    app: AppState,
}

impl PortState {
    fn shared(&self) -> &Shared {
        &self.app.shared
    }

    /// Runs `f` on the control loop before its next tick.
    async fn exec<T: Send + 'static>(
        &self,
        f: impl FnOnce(&mut Controller) -> T + Send + 'static,
    ) -> Result<T, ApiError> {
        let (tx, rx) = oneshot::channel();
        let job: Job = Box::new(move |c| {
            let _ = tx.send(f(c));
        });
        let unavailable = || ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", "control loop stopped");
        self.app.commands.send(job).map_err(|_| unavailable())?;
        match tokio::time::timeout(COMMAND_TIMEOUT, rx).await {
            Ok(Ok(v)) => Ok(v),
            _ => Err(unavailable()),
        }
    }
}

#[derive(Debug)]
pub(crate) struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

impl From<MemoryError> for ApiError {
    fn from(e: MemoryError) -> Self {
        let (status, code) = match &e {
            MemoryError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            MemoryError::DuplicateName(_) => (StatusCode::CONFLICT, "duplicate_name"),
            MemoryError::AlreadyRecording | MemoryError::NotRecording | MemoryError::TorqueEnabled => {
                (StatusCode::CONFLICT, "recording_state")
            }
            MemoryError::EmptyName | MemoryError::UnplayableClip(_) | MemoryError::InvalidRate => {
                (StatusCode::BAD_REQUEST, "invalid_action")
            }
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<ControlError> for ApiError {
    fn from(e: ControlError) -> Self {
        let message = e.to_string();
        let (status, code) = match e {
            ControlError::Memory(m) => return m.into(),
            ControlError::Playback(PlaybackError::Clip(m)) => return m.into(),
            ControlError::Locked | ControlError::Playback(PlaybackError::Locked) => (StatusCode::CONFLICT, "locked"),
            ControlError::Playback(PlaybackError::NotFound(_)) => (StatusCode::NOT_FOUND, "not_found"),
            ControlError::Playback(_) | ControlError::Recording => (StatusCode::CONFLICT, "busy"),
            ControlError::Safety(SafetyError::NotLocked) => (StatusCode::CONFLICT, "not_locked"),
            ControlError::Arm(ArmError::LimitViolation { .. } | ArmError::DimensionMismatch { .. }) => {
                (StatusCode::BAD_REQUEST, "limit_violation")
            }
            ControlError::Arm(ArmError::TorqueEnabled) => (StatusCode::CONFLICT, "torque_enabled"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, message)
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn forbidden(role: Role) -> ApiError {
    ApiError::new(
        StatusCode::FORBIDDEN,
        "forbidden",
        format!("this endpoint is only available on the {role:?} port").to_lowercase(),
    )
}

/// Both ports share one route table. Routes belonging to the other role
/// answer 403 before any request parsing happens.
pub(crate) fn router(role: Role, app: AppState) -> Router {
    let user = Router::new()
        .route("/play/{name}", post(user_play))
        .route("/stop", post(stop))
        .route("/capture", post(capture).layer(DefaultBodyLimit::max(MAX_IMAGE_BYTES)))
        .route("/recommendation", get(recommendation))
        .route("/settings/input", get(get_input_settings).post(set_input_settings))
        .route("/history", get(history));
    let assistant = Router::new()
        .route("/estop", post(estop))
        .route("/unlock", post(unlock))
        .route("/record/start", post(record_start))
        .route("/record/stop", post(record_stop))
        .route("/guide", post(guide))
        .route("/actions/{key}/name", post(name_action))
        .route("/actions/{key}/play", post(assistant_play))
        .route("/actions/{key}", axum::routing::delete(delete_action));
    let deny = |owner: Role| middleware::from_fn(move |_req: Request, _next: Next| async move { forbidden(owner).into_response() });
    let (user, assistant) = match role {
        Role::User => (user, assistant.route_layer(deny(Role::Assistant))),
        Role::Assistant => (user.route_layer(deny(Role::User)), assistant),
    };
    Router::new()
        .route("/state", get(state))
        .route("/ws/state", get(ws_state))
        .route("/actions", get(list_actions))
        .merge(user)
        .merge(assistant)
        .with_state(PortState { role, app })
}

async fn state(State(s): State<PortState>) -> Json<Value> {
    let view = s.shared().view().clone();
    Json(json!({
        "role": s.role,
        "arm": view.arm,
        "safety": view.safety.as_ref().map(safety_payload),
        "playback": view.playback,
        "recording": view.recording,
    }))
}

#[derive(Debug, Serialize)]
struct ActionSummary {
    id: Uuid,
    name: String,
    created_at: DateTime<Utc>,
    last_used_at: Option<DateTime<Utc>>,
    duration: f64,
    samples: usize,
}

impl From<&ActionClip> for ActionSummary {
    fn from(c: &ActionClip) -> Self {
        Self {
            id: c.id,
            name: c.name.clone(),
            created_at: c.created_at,
            last_used_at: c.last_used_at,
            duration: c.duration(),
            samples: c.samples.len(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct ActionQuery {
    #[serde(default)]
    query: String,
}

/// The user sees gestures in search order, without `init`. The assistant
/// sees every clip in library order.
async fn list_actions(State(s): State<PortState>, Query(q): Query<ActionQuery>) -> Json<Vec<ActionSummary>> {
    let lib = s.shared().library.read().expect("library lock poisoned");
    let list = match s.role {
        Role::User => lib.search_actions(&q.query).iter().filter_map(|n| lib.get(n)).map(ActionSummary::from).collect(),
        Role::Assistant => {
            let needle = q.query.to_lowercase();
            lib.clips().iter().filter(|c| c.name.to_lowercase().contains(&needle)).map(ActionSummary::from).collect()
        }
    };
    Json(list)
}

async fn play(s: &PortState, name: String) -> ApiResult<(StatusCode, Json<Value>)> {
    let shared = s.app.shared.clone();
    let status = s
        .exec(move |c| {
            let status = c.play(&name)?.status();
            // Visible to capture's busy check before the next tick.
            shared.view().playback = Some(status.clone());
            Ok::<_, ControlError>(status)
        })
        .await??;
    s.shared().session().push_history(&status.name);
    Ok((StatusCode::ACCEPTED, Json(serde_json::to_value(status).unwrap_or(Value::Null))))
}

async fn user_play(State(s): State<PortState>, Path(name): Path<String>) -> ApiResult<(StatusCode, Json<Value>)> {
    play(&s, name).await
}

async fn assistant_play(State(s): State<PortState>, Path(key): Path<String>) -> ApiResult<(StatusCode, Json<Value>)> {
    play(&s, key).await
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum StopSource {
    #[default]
    Tap,
    Estop,
}

#[derive(Debug, Default, Deserialize)]
struct StopBody {
    #[serde(default)]
    source: StopSource,
}

async fn trip(s: &PortState, reason: LockReason) -> ApiResult<Json<Value>> {
    let state = s
        .exec(move |c| {
            c.trip(reason);
            c.safety_state()
        })
        .await?;
    Ok(Json(safety_payload(&state)))
}

/// Tap-anywhere stop, or the user's e-stop. An empty body means a tap.
async fn stop(State(s): State<PortState>, body: axum::body::Bytes) -> ApiResult<Json<Value>> {
    let body: StopBody = if body.iter().all(u8::is_ascii_whitespace) {
        StopBody::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?
    };
    let reason = match body.source {
        StopSource::Tap => LockReason::TapStop,
        StopSource::Estop => LockReason::EstopUser,
    };
    trip(&s, reason).await
}

async fn estop(State(s): State<PortState>) -> ApiResult<Json<Value>> {
    trip(&s, LockReason::EstopAssistant).await
}

async fn unlock(State(s): State<PortState>) -> ApiResult<Json<Value>> {
    let state = s
        .exec(|c| {
            c.unlock(UnlockSource::Assistant)?;
            Ok::<_, ControlError>(c.safety_state())
        })
        .await??;
    Ok(Json(safety_payload(&state)))
}

async fn record_start(State(s): State<PortState>) -> ApiResult<Json<Value>> {
    s.exec(|c| c.start_recording()).await??;
    Ok(Json(json!({ "recording": true })))
}

async fn record_stop(State(s): State<PortState>) -> ApiResult<Json<Value>> {
    let clip = s.exec(|c| c.stop_recording()).await??;
    let body = json!({
        "id": clip.id,
        "samples": clip.samples.len(),
        "duration": clip.duration(),
        "sample_rate_hz": clip.sample_rate,
    });
    s.shared().session().pending_clips.insert(clip.id, clip);
    Ok(Json(body))
}

#[derive(Debug, Deserialize)]
struct GuideBody {
    positions: JointVector,
}

/// Simulated hand guidance of the torque-off arm.
async fn guide(State(s): State<PortState>, Json(body): Json<GuideBody>) -> ApiResult<Json<Value>> {
    s.exec(move |c| c.guide(body.positions)).await??;
    Ok(Json(json!({ "positions": body.positions })))
}

#[derive(Debug, Deserialize)]
struct NameBody {
    name: String,
}

/// Names a pending recording, or renames a saved action, by id.
async fn name_action(
    State(s): State<PortState>,
    Path(key): Path<String>,
    Json(body): Json<NameBody>,
) -> ApiResult<Json<Value>> {
    let id: Uuid = key.parse().map_err(|_| ApiError::bad_request(format!("{key:?} is not an action id")))?;
    let shared = s.shared();
    let pending = shared.session().pending_clips.remove(&id);
    let change = match pending {
        Some(clip) => {
            let saved = shared.library.write().expect("library lock poisoned").save_action(clip.clone(), &body.name, false);
            if let Err(e) = saved {
                shared.session().pending_clips.insert(id, clip);
                return Err(e.into());
            }
            LibraryChange::Saved { name: body.name.clone() }
        }
        None => {
            let mut lib = shared.library.write().expect("library lock poisoned");
            let old = lib
                .get_by_id(id)
                .map(|c| c.name.clone())
                .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no action with id {id}")))?;
            lib.rename_action(&old, &body.name)?;
            LibraryChange::Renamed { from: old, to: body.name.clone() }
        }
    };
    shared.library_changed(change);
    Ok(Json(json!({ "id": id, "name": body.name })))
}

/// Deletes a saved action by name, or discards a pending recording by id.
async fn delete_action(State(s): State<PortState>, Path(key): Path<String>) -> ApiResult<StatusCode> {
    let shared = s.shared();
    let deleted = shared.library.write().expect("library lock poisoned").delete_action(&key);
    match deleted {
        Ok(_) => {
            shared.library_changed(LibraryChange::Deleted { name: key });
            Ok(StatusCode::NO_CONTENT)
        }
        Err(MemoryError::NotFound(_)) => {
            let discarded = key.parse::<Uuid>().ok().and_then(|id| shared.session().pending_clips.remove(&id));
            match discarded {
                Some(_) => Ok(StatusCode::NO_CONTENT),
                None => Err(MemoryError::NotFound(key).into()),
            }
        }
        Err(e) => Err(e.into()),
    }
}

async fn history(State(s): State<PortState>) -> ApiResult<Json<Value>> {
    let history: Vec<_> = s.shared().session().history.iter().cloned().collect();
    Ok(Json(serde_json::to_value(history).unwrap_or(Value::Null)))
}

async fn get_input_settings(State(s): State<PortState>) -> ApiResult<Json<InputSettings>> {
    Ok(Json(s.shared().session().input))
}

async fn set_input_settings(
    State(s): State<PortState>,
    Json(settings): Json<InputSettings>,
) -> ApiResult<Json<InputSettings>> {
    settings.validate().map_err(ApiError::bad_request)?;
    s.shared().session().input = settings;
    Ok(Json(settings))
}

async fn recommendation(State(s): State<PortState>) -> ApiResult<Json<RecommendationStatus>> {
    Ok(Json(s.shared().session().recommendation.clone()))
}

/// Uploads a camera frame and returns suggested gestures. The image lives
/// only in memory for the duration of the request. A newer capture
/// supersedes one still waiting on the backend.
async fn capture(State(s): State<PortState>, mut multipart: Multipart) -> ApiResult<Json<Value>> {
    let mut image = None;
    while let Some(field) = multipart.next_field().await.map_err(|e| ApiError::bad_request(e.to_string()))? {
        if field.name() == Some("image") {
            let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
            image = Some(bytes.to_vec());
        }
    }
    let image = image.ok_or_else(|| ApiError::bad_request("multipart field \"image\" is missing"))?;

    let shared = s.app.shared.clone();
    if shared.view().playback_active() {
        return Err(ApiError::new(StatusCode::CONFLICT, "busy", "an action is playing"));
    }
    let (names, gestures) = {
        let lib = shared.library.read().expect("library lock poisoned");
        (lib.names(), lib.gesture_count())
    };
    if gestures < MIN_SUGGESTIONS {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "library_too_small",
            format!("record at least {MIN_SUGGESTIONS} actions besides '{INIT_ACTION}' first"),
        ));
    }
    let request = RecommendationRequest::new(image, names).map_err(|e| ApiError::bad_request(e.to_string()))?;

    let generation = shared.next_capture();
    shared.set_recommendation(RecommendationStatus::Pending { generation });
    let backend = shared.backend.clone();
    let outcome = tokio::task::spawn_blocking(move || request_recommendation(backend.as_ref(), request))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;

    if shared.current_capture() != generation {
        return Err(ApiError::new(StatusCode::CONFLICT, "superseded", "a newer capture replaced this one"));
    }
    match outcome {
        Ok(result) => {
            let body = serde_json::to_value(&result).unwrap_or(Value::Null);
            shared.set_recommendation(RecommendationStatus::Ready { generation, result });
            Ok(Json(body))
        }
        Err(e) => {
            let (code, message) = match &e {
                RecommendError::Backend(b) => ("backend_error", format!("The recommendation service is unavailable: {b}")),
                RecommendError::ParseFailed { .. } | RecommendError::NoValidActions => {
                    ("no_suggestions", "No matching actions were suggested. Please try again.".to_string())
                }
                other => ("backend_error", other.to_string()),
            };
            shared.set_recommendation(RecommendationStatus::Failed { generation, message: message.clone() });
            Err(ApiError::new(StatusCode::BAD_GATEWAY, code, message))
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    seq: u64,
    payload: &'a Value,
}

async fn ws_state(State(s): State<PortState>, ws: WebSocketUpgrade) -> Response {
    let shared = s.app.shared.clone();
    ws.on_upgrade(move |socket| stream_events(socket, shared))
}

/// Sends a snapshot of the current state, then every event. A client that
/// falls a full buffer behind is disconnected rather than slowing the loop.
async fn stream_events(mut socket: WebSocket, shared: Arc<Shared>) {
    let mut rx = shared.events.subscribe();
    let mut initial = Vec::new();
    {
        let view = shared.view();
        if let Some(arm) = &view.arm {
            initial.push(Event::new("arm", arm));
        }
        if let Some(safety) = &view.safety {
            initial.push(Event { kind: "safety", payload: safety_payload(safety) });
        }
        if let Some(playback) = &view.playback {
            initial.push(Event::new("playback", playback));
        }
    }
    initial.push(Event::new("recommendation", shared.session().recommendation.clone()));

    let mut seq = 0u64;
    for event in &initial {
        seq += 1;
        if send(&mut socket, event, seq).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            received = rx.recv() => match received {
                Ok(event) => {
                    seq += 1;
                    if send(&mut socket, &event, seq).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(missed)) => {
                    log::warn!("dropping slow websocket client ({missed} events behind)");
                    let frame = CloseFrame { code: 1008, reason: "client too slow".into() };
                    let _ = socket.send(Message::Close(Some(frame))).await;
                    return;
                }
                Err(broadcast::error::RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

async fn send(socket: &mut WebSocket, event: &Event, seq: u64) -> Result<(), axum::Error> {
    let envelope = Envelope { kind: event.kind, seq, payload: &event.payload };
    let text = serde_json::to_string(&envelope).unwrap_or_default();
    socket.send(Message::Text(text.into())).await
}

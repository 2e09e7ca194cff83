use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use serde::Serialize;
use serde_json::{json, Value};
use tokio::sync::broadcast;
use uuid::Uuid;

use abc_core::control::{ArmState, ControlEvent, LibraryChange, SharedLibrary};
use abc_core::memory::ActionClip;
use abc_core::playback::PlaybackStatus;
use abc_core::recommend::{LlmBackend, RecommendationResult};
use abc_core::safety::SafetyState;

use crate::config::InputSettings;

pub const HISTORY_CAPACITY: usize = 50;
/// Per-client backlog before a slow WebSocket client is dropped.
pub(crate) const EVENT_BUFFER: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub name: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RecommendationStatus {
    Idle,
    Pending { generation: u64 },
    Ready { generation: u64, result: RecommendationResult },
    Failed { generation: u64, message: String },
}

/// One outgoing state event, before the per-connection sequence number is
/// attached.
#[derive(Debug, Clone, Serialize)]
pub(crate) struct Event {
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub payload: Value,
}

impl Event {
    pub fn new(kind: &'static str, payload: impl Serialize) -> Self {
        Self { kind, payload: serde_json::to_value(payload).unwrap_or(Value::Null) }
    }
}

pub(crate) fn safety_payload(state: &SafetyState) -> Value {
    json!({ "mode": state.mode(), "reason": state.reason(), "since": state.since() })
}

impl From<&ControlEvent> for Event {
    fn from(event: &ControlEvent) -> Self {
        match event {
            ControlEvent::Arm(state) => Event::new("arm", state),
            ControlEvent::Safety(state) => Event { kind: "safety", payload: safety_payload(state) },
            ControlEvent::Playback(status) => Event::new("playback", status),
            ControlEvent::Library(change) => Event::new("library", change),
            ControlEvent::Recording { active, samples } => {
                Event::new("recording", json!({ "active": active, "samples": samples }))
            }
        }
    }
}

/// Latest loop outputs, for the polling endpoints.
#[derive(Debug, Clone, Default)]
pub(crate) struct LoopView {
    pub arm: Option<ArmState>,
    pub safety: Option<SafetyState>,
    pub playback: Option<PlaybackStatus>,
    pub recording: bool,
}

impl LoopView {
    pub fn playback_active(&self) -> bool {
        self.playback.as_ref().is_some_and(|p| !p.phase.is_finished())
    }
}

#[derive(Debug)]
pub(crate) struct Session {
    pub history: VecDeque<HistoryEntry>,
    /// Finished recordings waiting for a name.
    pub pending_clips: HashMap<Uuid, ActionClip>,
    pub recommendation: RecommendationStatus,
    pub input: InputSettings,
}

impl Session {
    pub fn push_history(&mut self, name: &str) {
        self.history.push_front(HistoryEntry { name: name.to_string(), at: Utc::now() });
        self.history.truncate(HISTORY_CAPACITY);
    }
}

pub(crate) struct Shared {
    pub library: SharedLibrary,
    pub backend: Arc<dyn LlmBackend>,
    pub events: broadcast::Sender<Event>,
    session: Mutex<Session>,
    view: Mutex<LoopView>,
    capture_generation: AtomicU64,
}

impl Shared {
    pub fn new(library: SharedLibrary, backend: Arc<dyn LlmBackend>, input: InputSettings) -> Self {
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        Self {
            library,
            backend,
            events,
            session: Mutex::new(Session {
                history: VecDeque::new(),
                pending_clips: HashMap::new(),
                recommendation: RecommendationStatus::Idle,
                input,
            }),
            view: Mutex::new(LoopView::default()),
            capture_generation: AtomicU64::new(0),
        }
    }

    pub fn session(&self) -> MutexGuard<'_, Session> {
        self.session.lock().expect("session lock poisoned")
    }

    pub fn view(&self) -> MutexGuard<'_, LoopView> {
        self.view.lock().expect("view lock poisoned")
    }

    pub fn publish(&self, event: Event) {
        // No subscribers is fine.
        let _ = self.events.send(event);
    }

    pub fn next_capture(&self) -> u64 {
        self.capture_generation.fetch_add(1, Ordering::SeqCst) + 1
    }

    pub fn current_capture(&self) -> u64 {
        self.capture_generation.load(Ordering::SeqCst)
    }

    pub fn set_recommendation(&self, status: RecommendationStatus) {
        self.session().recommendation = status.clone();
        self.publish(Event::new("recommendation", status));
    }

    pub fn library_changed(&self, change: LibraryChange) {
        self.publish(Event::new("library", change));
    }
}

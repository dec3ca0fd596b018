//! HTTP/WebSocket facade on the control port. The wizard console talks only
//! to this: REST for state and commands, `/ws` for pushed updates.
//!
//! | method | path             | body / reply                                   |
//! |--------|------------------|------------------------------------------------|
//! | GET    | `/api/schedule`  | the experiment schedule                        |
//! | GET    | `/api/session`   | `SessionView`, 404 when no session is live     |
//! | POST   | `/api/session`   | `{"participant_id"}` → `SessionView` (201)     |
//! | GET    | `/api/log`       | the live session's `SessionLog`                |
//! | POST   | `/api/events`    | `ControlEvent` → `{"session","logged"}`        |
//! | GET    | `/api/prompts`   | prompt catalog, `?actor=` to filter            |
//! | GET    | `/api/telemetry` | `{"t","samples"}`                              |
//! | GET    | `/ws`            | stream of [`Update`]                           |
//!
//! Errors are `{"error","kind"}` with 400, 404, 409 or 500.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use gesture_relay::bus::topics;
use gesture_relay::harness::{
    ExperimentSchedule, HarnessError, LogEntry, SessionController, SessionError, SessionLog, SessionLogWriter,
    SessionView, SESSION_FILE_PREFIX,
};
use gesture_relay::playback::{PromptCategory, PromptLibrary};
use gesture_relay::telemetry::TelemetrySample;
use gesture_relay::{Clock, ControlEvent, Payload, Telemetry, Transport};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

/// Telemetry push interval on `/ws`.
pub const TELEMETRY_PUSH: Duration = Duration::from_millis(250);
const UPDATE_BUFFER: usize = 256;

/// Pushed to every `/ws` client. A fresh connection first receives a
/// `session` and a `telemetry` update, so reconnecting is a full resync.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Update {
    Session { session: Option<SessionView> },
    Event { t: i64, event: ControlEvent },
    Playback { t: i64, event: ControlEvent },
    Telemetry { t: i64, samples: Vec<TelemetrySample> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub actor_id: String,
    pub prompt_id: String,
    pub category: PromptCategory,
    pub variants: usize,
    /// Lipsync length per variant.
    pub duration_ms: Vec<i64>,
}

#[derive(Debug, Deserialize)]
pub struct StartSession {
    pub participant_id: String,
}

#[derive(Debug, Serialize)]
pub struct EventReply {
    pub session: SessionView,
    pub logged: Vec<LogEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    pub kind: String,
}

struct Failure(StatusCode, &'static str, String);

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let body = ApiError {
            error: self.2,
            kind: self.1.to_string(),
        };
        (self.0, Json(body)).into_response()
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let msg = e.to_string();
        match e {
            HarnessError::Session(s) => match s {
                SessionError::Illegal { .. }
                | SessionError::NoInteraction
                | SessionError::InteractionRunning(_)
                | SessionError::SessionComplete => Failure(StatusCode::CONFLICT, "phase", msg),
                SessionError::InvalidRanking(_) => Failure(StatusCode::BAD_REQUEST, "ranking", msg),
                SessionError::AnswerCount(_) | SessionError::AnswerRange(_) => {
                    Failure(StatusCode::BAD_REQUEST, "answers", msg)
                }
                SessionError::UnknownPrompt(_) => Failure(StatusCode::BAD_REQUEST, "unknown_prompt", msg),
            },
            HarnessError::UnknownParticipant(_) => Failure(StatusCode::NOT_FOUND, "unknown_participant", msg),
            _ => Failure(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

fn no_session() -> Failure {
    Failure(StatusCode::NOT_FOUND, "no_session", "no session is live; POST /api/session first".into())
}

struct Live {
    controller: SessionController,
    writer: Option<SessionLogWriter<BufWriter<File>>>,
}

/// Everything the facade needs. Mutations are serialized by one lock.
pub struct ControlState {
    schedule: Arc<ExperimentSchedule>,
    bus: Arc<dyn Transport>,
    clock: Arc<dyn Clock>,
    telemetry: Arc<Telemetry>,
    libraries: BTreeMap<String, Arc<PromptLibrary>>,
    log_dir: Option<PathBuf>,
    live: Mutex<Option<Live>>,
    updates: broadcast::Sender<Update>,
}

impl ControlState {
    pub fn new(
        schedule: Arc<ExperimentSchedule>,
        bus: Arc<dyn Transport>,
        clock: Arc<dyn Clock>,
        libraries: impl IntoIterator<Item = Arc<PromptLibrary>>,
        log_dir: Option<PathBuf>,
    ) -> Arc<Self> {
        Arc::new(Self {
            schedule,
            bus,
            clock,
            telemetry: Arc::new(Telemetry::new()),
            libraries: libraries.into_iter().map(|l| (l.actor_id.clone(), l)).collect(),
            log_dir,
            live: Mutex::new(None),
            updates: broadcast::channel(UPDATE_BUFFER).0,
        })
    }

    pub fn telemetry(&self) -> &Arc<Telemetry> {
        &self.telemetry
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Update> {
        self.updates.subscribe()
    }

    fn push(&self, u: Update) {
        // no receivers is fine
        let _ = self.updates.send(u);
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Option<Live>> {
        self.live.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn view(&self) -> Option<SessionView> {
        self.lock().as_ref().map(|l| l.controller.view())
    }

    pub fn telemetry_update(&self) -> Update {
        Update::Telemetry {
            t: self.clock.now_ms(),
            samples: self.telemetry.snapshot(),
        }
    }

    fn catalog(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.libraries.values().flat_map(|l| l.ids().map(str::to_string)).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    fn start(&self, participant_id: &str) -> Result<SessionView, Failure> {
        let mut live = self.lock();
        if let Some(l) = live.as_ref().filter(|l| !l.controller.is_complete()) {
            return Err(Failure(
                StatusCode::CONFLICT,
                "session_active",
                format!("session of `{}` is still running", l.controller.participant_id()),
            ));
        }
        let mut controller = SessionController::new(self.schedule.clone(), participant_id, self.clock.now_ms())?;
        if !self.libraries.is_empty() {
            controller = controller.with_prompt_catalog(self.catalog());
        }
        let writer = match &self.log_dir {
            Some(dir) => {
                let path = dir.join(format!("{SESSION_FILE_PREFIX}{participant_id}.jsonl"));
                if path.metadata().is_ok_and(|m| m.len() > 0) {
                    return Err(Failure(
                        StatusCode::CONFLICT,
                        "log_exists",
                        format!("{} already holds a session", path.display()),
                    ));
                }
                let mut w = SessionLogWriter::create(&path)?;
                w.append(controller.entries())?;
                Some(w)
            }
            None => None,
        };
        let view = controller.view();
        *live = Some(Live { controller, writer });
        self.telemetry.incr("harness.sessions");
        self.push(Update::Session {
            session: Some(view.clone()),
        });
        Ok(view)
    }

    fn apply_event(&self, ev: ControlEvent) -> Result<EventReply, Failure> {
        let mut guard = self.lock();
        let live = guard.as_mut().ok_or_else(no_session)?;
        let now = self.clock.now_ms();
        let logged = match live.controller.handle(ev.clone(), now, self.bus.as_ref()) {
            Ok(e) => e,
            Err(e) => {
                self.telemetry.incr("harness.rejected_events");
                return Err(e.into());
            }
        };
        if let Some(w) = live.writer.as_mut() {
            w.append(&logged)?;
        }
        self.telemetry.incr("harness.events");
        let session = live.controller.view();
        drop(guard);
        self.push(Update::Event { t: now, event: ev });
        self.push(Update::Session {
            session: Some(session.clone()),
        });
        Ok(EventReply { session, logged })
    }

    pub fn session_log(&self) -> Option<SessionLog> {
        self.lock().as_ref().map(|l| l.controller.log())
    }

    pub fn prompts(&self, actor: Option<&str>) -> Vec<PromptEntry> {
        let current = self.view().and_then(|v| v.actor_id);
        let actor = actor.map(str::to_string).or(current);
        self.libraries
            .values()
            .filter(|l| actor.as_ref().is_none_or(|a| *a == l.actor_id))
            .flat_map(|l| {
                l.iter().map(|r| PromptEntry {
                    actor_id: l.actor_id.clone(),
                    prompt_id: r.prompt_id.clone(),
                    category: r.category,
                    variants: r.variants.len(),
                    duration_ms: r.variants.iter().map(|v| v.track.duration_ms()).collect(),
                })
            })
            .collect()
    }

    /// Forward `telemetry.*` samples into the local telemetry and playback
    /// events to `/ws`, until `stop` is set.
    pub fn spawn_bus_relay(self: &Arc<Self>, stop: Arc<AtomicBool>) -> Result<JoinHandle<()>, gesture_relay::bus::BusError> {
        let samples = self.bus.subscribe(topics::TELEMETRY)?;
        let playback = self.bus.subscribe(topics::PLAYBACK_EVENTS)?;
        let state = self.clone();
        Ok(std::thread::Builder::new()
            .name("control-relay".into())
            .spawn(move || {
                while !stop.load(Ordering::Acquire) {
                    if let Some(m) = samples.recv_timeout(Duration::from_millis(20)) {
                        if let Payload::TelemetrySample(s) = m.payload {
                            state.telemetry.set_gauge(&s.name, s.value);
                        }
                    }
                    for m in playback.drain() {
                        if let Payload::ControlEvent(event) = m.payload {
                            state.push(Update::Playback { t: m.t, event });
                        }
                    }
                }
            })
            .expect("spawn relay thread"))
    }
}

pub fn router(state: Arc<ControlState>) -> Router {
    Router::new()
        .route("/api/schedule", get(get_schedule))
        .route("/api/session", get(get_session).post(post_session))
        .route("/api/log", get(get_log))
        .route("/api/events", axum::routing::post(post_event))
        .route("/api/prompts", get(get_prompts))
        .route("/api/telemetry", get(get_telemetry))
        .route("/ws", get(ws))
        .with_state(state)
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, Failure> {
    serde_json::from_slice(body).map_err(|e| Failure(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))
}

async fn get_schedule(State(s): State<Arc<ControlState>>) -> Json<ExperimentSchedule> {
    Json(ExperimentSchedule::clone(&s.schedule))
}

async fn get_session(State(s): State<Arc<ControlState>>) -> Result<Json<SessionView>, Failure> {
    s.view().map(Json).ok_or_else(no_session)
}

async fn post_session(State(s): State<Arc<ControlState>>, body: Bytes) -> Result<Response, Failure> {
    let req: StartSession = parse_body(&body)?;
    let view = s.start(&req.participant_id)?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_log(State(s): State<Arc<ControlState>>) -> Result<Json<SessionLog>, Failure> {
    s.session_log().map(Json).ok_or_else(no_session)
}

async fn post_event(State(s): State<Arc<ControlState>>, body: Bytes) -> Result<Json<EventReply>, Failure> {
    let ev: ControlEvent = parse_body(&body)?;
    s.apply_event(ev).map(Json)
}

#[derive(Debug, Deserialize)]
struct PromptQuery {
    actor: Option<String>,
}

async fn get_prompts(State(s): State<Arc<ControlState>>, Query(q): Query<PromptQuery>) -> Json<Vec<PromptEntry>> {
    Json(s.prompts(q.actor.as_deref()))
}

async fn get_telemetry(State(s): State<Arc<ControlState>>) -> Json<Update> {
    Json(s.telemetry_update())
}

async fn ws(State(s): State<Arc<ControlState>>, upgrade: WebSocketUpgrade) -> Response {
    upgrade.on_upgrade(move |socket| stream_updates(s, socket))
}

fn encode(u: &Update) -> Message {
    Message::Text(serde_json::to_string(u).expect("update serializes"))
}

async fn resync(s: &ControlState, socket: &mut WebSocket) -> Result<(), axum::Error> {
    socket.send(encode(&Update::Session { session: s.view() })).await?;
    socket.send(encode(&s.telemetry_update())).await
}

async fn stream_updates(s: Arc<ControlState>, mut socket: WebSocket) {
    let mut rx = s.subscribe();
    if resync(&s, &mut socket).await.is_err() {
        return;
    }
    let mut tick = tokio::time::interval(TELEMETRY_PUSH);
    loop {
        tokio::select! {
            u = rx.recv() => {
                let sent = match u {
                    Ok(u) => socket.send(encode(&u)).await,
                    Err(broadcast::error::RecvError::Lagged(_)) => resync(&s, &mut socket).await,
                    Err(broadcast::error::RecvError::Closed) => break,
                };
                if sent.is_err() {
                    break;
                }
            }
            _ = tick.tick() => {
                if socket.send(encode(&s.telemetry_update())).await.is_err() {
                    break;
                }
            }
            m = socket.recv() => match m {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}

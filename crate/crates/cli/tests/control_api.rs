use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use gesture_relay::bus::topics;
use gesture_relay::frame::default_lip_channels;
use gesture_relay::harness::{generate_schedule, ExperimentSchedule, SessionLog, SessionView};
use gesture_relay::sim::synthetic_library;
use gesture_relay::{Bus, ControlEvent, SystemClock, Transport};
use gesture_relay_cli::control::{router, ApiError, ControlState, PromptEntry, Update};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    app: Router,
    state: Arc<ControlState>,
    bus: Bus,
    schedule: Arc<ExperimentSchedule>,
    dir: tempfile::TempDir,
}

fn fixture() -> Fixture {
    let schedule = Arc::new(generate_schedule(12, 5).unwrap());
    let lips = default_lip_channels();
    let libs: Vec<_> = schedule
        .actors
        .iter()
        .map(|a| Arc::new(synthetic_library(&a.id, 20, 1, 5, &lips)))
        .collect();
    let bus = Bus::new();
    let dir = tempfile::tempdir().unwrap();
    let state = ControlState::new(
        schedule.clone(),
        Arc::new(bus.clone()),
        Arc::new(SystemClock),
        libs,
        Some(dir.path().to_path_buf()),
    );
    Fixture {
        app: router(state.clone()),
        state,
        bus,
        schedule,
        dir,
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, v)
}

async fn event(app: &Router, ev: ControlEvent) -> (StatusCode, Value) {
    call(app, "POST", "/api/events", Some(serde_json::to_value(ev).unwrap())).await
}

fn kind(v: &Value) -> String {
    serde_json::from_value::<ApiError>(v.clone()).unwrap().kind
}

fn view(v: &Value) -> SessionView {
    serde_json::from_value(v.clone()).unwrap()
}

async fn start(app: &Router, pid: &str) -> SessionView {
    let (s, v) = call(app, "POST", "/api/session", Some(json!({ "participant_id": pid }))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    view(&v)
}

#[tokio::test]
async fn no_session_is_404() {
    let f = fixture();
    let (s, v) = call(&f.app, "GET", "/api/session", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(kind(&v), "no_session");
    let (s, _) = event(&f.app, ControlEvent::StartInteraction).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn schedule_round_trips() {
    let f = fixture();
    let (s, v) = call(&f.app, "GET", "/api/schedule", None).await;
    assert_eq!(s, StatusCode::OK);
    let got: ExperimentSchedule = serde_json::from_value(v).unwrap();
    assert_eq!(got, *f.schedule);
}

#[tokio::test]
async fn starting_a_session_writes_the_log() {
    let f = fixture();
    let v = start(&f.app, "P03").await;
    assert_eq!(v.participant_id, "P03");
    assert_eq!(v.phase, None);
    let text = std::fs::read_to_string(f.dir.path().join("session_P03.jsonl")).unwrap();
    assert!(text.starts_with("{\"entry\":\"session_started\""), "{text}");

    let (s, v) = call(&f.app, "POST", "/api/session", Some(json!({ "participant_id": "P04" }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(kind(&v), "session_active");
}

#[tokio::test]
async fn unknown_participant_and_bad_body() {
    let f = fixture();
    let (s, v) = call(&f.app, "POST", "/api/session", Some(json!({ "participant_id": "P99" }))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(kind(&v), "unknown_participant");
    let (s, v) = call(&f.app, "POST", "/api/session", Some(json!({ "who": 1 }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(kind(&v), "bad_request");
    start(&f.app, "P01").await;
    let (s, v) = call(&f.app, "POST", "/api/events", Some(json!({ "event": "dance" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(kind(&v), "bad_request");
}

#[tokio::test]
async fn phase_guard_is_409_and_leaves_state() {
    let f = fixture();
    start(&f.app, "P01").await;
    let (s, v) = event(&f.app, ControlEvent::StartInteraction).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let before = view(&v["session"]);
    let (s, v) = event(&f.app, ControlEvent::RecordOutcome { accepted: true }).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(kind(&v), "phase");
    assert!(v["error"].as_str().unwrap().contains("record_outcome"));
    let (_, now) = call(&f.app, "GET", "/api/session", None).await;
    assert_eq!(view(&now), before);
}

#[tokio::test]
async fn ranking_must_be_a_permutation() {
    let f = fixture();
    start(&f.app, "P02").await;
    event(&f.app, ControlEvent::StartInteraction).await;
    event(&f.app, ControlEvent::StartItems).await;
    for _ in 0..5 {
        event(&f.app, ControlEvent::NextItem).await;
    }
    let (_, v) = call(&f.app, "GET", "/api/session", None).await;
    let mut items = view(&v).item_order;
    items[1] = items[0].clone();
    let (s, v) = event(&f.app, ControlEvent::SubmitRanking { ranking: items }).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(kind(&v), "ranking");
}

#[tokio::test]
async fn prompts_follow_the_current_actor() {
    let f = fixture();
    let (_, v) = call(&f.app, "GET", "/api/prompts", None).await;
    let all: Vec<PromptEntry> = serde_json::from_value(v).unwrap();
    assert_eq!(all.len(), 20 * f.schedule.actors.len());

    start(&f.app, "P01").await;
    let (_, v) = event(&f.app, ControlEvent::StartInteraction).await;
    let actor = view(&v["session"]).actor_id.unwrap();
    let (_, v) = call(&f.app, "GET", "/api/prompts", None).await;
    let mine: Vec<PromptEntry> = serde_json::from_value(v).unwrap();
    assert_eq!(mine.len(), 20);
    assert!(mine.iter().all(|p| p.actor_id == actor));
    assert!(mine.iter().all(|p| p.duration_ms.len() == p.variants));

    let other = &f.schedule.actors.iter().find(|a| a.id != actor).unwrap().id;
    let (_, v) = call(&f.app, "GET", &format!("/api/prompts?actor={other}"), None).await;
    let theirs: Vec<PromptEntry> = serde_json::from_value(v).unwrap();
    assert!(theirs.iter().all(|p| &p.actor_id == other));

    let (s, v) = event(
        &f.app,
        ControlEvent::PlayPrompt {
            prompt_id: "no-such-prompt".into(),
            variant: Default::default(),
        },
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(kind(&v), "unknown_prompt");
}

#[tokio::test]
async fn events_reach_the_bus() {
    let f = fixture();
    let session = f.bus.subscribe(topics::SESSION_EVENTS).unwrap();
    let playback = f.bus.subscribe(topics::PLAYBACK_COMMANDS).unwrap();
    let behavior = f.bus.subscribe(topics::BEHAVIOR_SET).unwrap();
    start(&f.app, "P01").await;
    event(&f.app, ControlEvent::StartInteraction).await;
    let (_, v) = call(&f.app, "GET", "/api/prompts", None).await;
    let id = v[0]["prompt_id"].as_str().unwrap().to_string();
    let (s, _) = event(
        &f.app,
        ControlEvent::PlayPrompt {
            prompt_id: id.clone(),
            variant: Default::default(),
        },
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(session.drain().len(), 2);
    let cmds = playback.drain();
    assert_eq!(cmds.len(), 1);
    assert!(matches!(
        &cmds[0].payload,
        gesture_relay::Payload::ControlEvent(ControlEvent::PlayPrompt { prompt_id, .. }) if *prompt_id == id
    ));
    assert_eq!(behavior.drain().len(), 1);
}

fn answers() -> Vec<u8> {
    (0..28).map(|i| (i % 7 + 1) as u8).collect()
}

async fn run_session(app: &Router, pid: &str) -> Vec<usize> {
    start(app, pid).await;
    let mut accepted = Vec::new();
    for _ in 0..3 {
        let (s, v) = event(app, ControlEvent::StartInteraction).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        let items = view(&v["session"]).item_order;
        event(app, ControlEvent::StartItems).await;
        for _ in 0..5 {
            event(app, ControlEvent::NextItem).await;
        }
        let mut ranking = items.clone();
        ranking.reverse();
        let (s, v) = event(app, ControlEvent::SubmitRanking { ranking }).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        for k in 0..3 {
            let (s, v) = event(app, ControlEvent::RecordOutcome { accepted: k != 1 }).await;
            assert_eq!(s, StatusCode::OK, "{v}");
        }
        let (s, v) = event(
            app,
            ControlEvent::SubmitQuestionnaire {
                answers: answers(),
                free_text: String::new(),
            },
        )
        .await;
        assert_eq!(s, StatusCode::OK, "{v}");
        accepted.push(view(&v["session"]).accepted_count);
    }
    let (s, v) = event(
        app,
        ControlEvent::SubmitFinalQuestionnaire {
            differences: "the copying one".into(),
            comments: String::new(),
        },
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert!(view(&v["session"]).complete);
    accepted
}

#[tokio::test]
async fn full_session_matches_the_log_file() {
    let f = fixture();
    let accepted = run_session(&f.app, "P05").await;
    assert_eq!(accepted, vec![2, 2, 2]);

    let (_, v) = call(&f.app, "GET", "/api/log", None).await;
    let served: SessionLog = serde_json::from_value(v).unwrap();
    let on_disk = SessionLog::load(&f.dir.path().join("session_P05.jsonl")).unwrap();
    assert_eq!(served, on_disk);
    let counts: Vec<usize> = on_disk.interactions.iter().map(|i| i.accepted_count).collect();
    assert_eq!(counts, accepted);

    // a finished session frees the harness for the next participant
    start(&f.app, "P06").await;
    let (s, v) = call(&f.app, "POST", "/api/session", Some(json!({ "participant_id": "P05" }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(kind(&v), "session_active");
}

#[tokio::test]
async fn existing_log_is_not_overwritten() {
    let f = fixture();
    std::fs::write(f.dir.path().join("session_P07.jsonl"), "{}\n").unwrap();
    let (s, v) = call(&f.app, "POST", "/api/session", Some(json!({ "participant_id": "P07" }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(kind(&v), "log_exists");
    assert_eq!(std::fs::read_to_string(f.dir.path().join("session_P07.jsonl")).unwrap(), "{}\n");
}

#[tokio::test]
async fn telemetry_counts_events_and_bus_samples() {
    let f = fixture();
    let stop = Arc::new(std::sync::atomic::AtomicBool::new(false));
    let relay = f.state.spawn_bus_relay(stop.clone()).unwrap();
    start(&f.app, "P01").await;
    event(&f.app, ControlEvent::StartInteraction).await;
    event(&f.app, ControlEvent::NextItem).await;
    f.bus
        .publish(
            topics::TELEMETRY,
            0,
            gesture_relay::Payload::TelemetrySample(gesture_relay::telemetry::TelemetrySample {
                name: "renderer.ticks.rate".into(),
                value: 125.0,
            }),
        )
        .unwrap();
    let mut seen = None;
    for _ in 0..100 {
        tokio::time::sleep(Duration::from_millis(10)).await;
        seen = f.state.telemetry().gauge("renderer.ticks.rate");
        if seen.is_some() {
            break;
        }
    }
    stop.store(true, std::sync::atomic::Ordering::Release);
    relay.join().unwrap();
    assert_eq!(seen, Some(125.0));

    let (s, v) = call(&f.app, "GET", "/api/telemetry", None).await;
    assert_eq!(s, StatusCode::OK);
    let Update::Telemetry { samples, .. } = serde_json::from_value(v).unwrap() else {
        panic!("not a telemetry update");
    };
    let get = |n: &str| samples.iter().find(|s| s.name == n).map(|s| s.value);
    assert_eq!(get("harness.events"), Some(1.0));
    assert_eq!(get("harness.rejected_events"), Some(1.0));
    assert_eq!(get("harness.sessions"), Some(1.0));
}

async fn next_update<S>(ws: &mut S) -> Update
where
    S: StreamExt<Item = Result<tokio_tungstenite::tungstenite::Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    loop {
        let m = tokio::time::timeout(Duration::from_secs(5), ws.next())
            .await
            .expect("update within 5 s")
            .unwrap()
            .unwrap();
        if let tokio_tungstenite::tungstenite::Message::Text(t) = m {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

#[tokio::test]
async fn websocket_resyncs_then_streams() {
    let f = fixture();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = f.app.clone();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    start(&f.app, "P01").await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
    let Update::Session { session: Some(v) } = next_update(&mut ws).await else {
        panic!("first update is the session");
    };
    assert_eq!(v.participant_id, "P01");
    assert!(matches!(next_update(&mut ws).await, Update::Telemetry { .. }));

    event(&f.app, ControlEvent::StartInteraction).await;
    let mut got_event = false;
    let mut got_view = false;
    let mut telemetry = 0;
    while !(got_event && got_view) {
        match next_update(&mut ws).await {
            Update::Event { event, .. } => {
                assert_eq!(event, ControlEvent::StartInteraction);
                got_event = true;
            }
            Update::Session { session: Some(v) } => {
                assert_eq!(v.interaction_index, Some(1));
                got_view = true;
            }
            Update::Telemetry { .. } => telemetry += 1,
            other => panic!("unexpected {other:?}"),
        }
    }
    // telemetry keeps flowing at 4 Hz
    let start = std::time::Instant::now();
    while telemetry < 3 {
        if let Update::Telemetry { .. } = next_update(&mut ws).await {
            telemetry += 1;
        }
    }
    assert!(start.elapsed() < Duration::from_secs(2));
    ws.send(tokio_tungstenite::tungstenite::Message::Close(None)).await.unwrap();
}


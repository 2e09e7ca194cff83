mod common;

use std::collections::HashMap;
use std::time::Duration;

use serde_json::{json, Value};

use abc_core::recommend::MockBackend;
use abc_service::{serve, ServiceConfig, ServiceError, HISTORY_CAPACITY};
use common::{connect, fixture_image, next_event, Harness};

const GESTURES: [&str; 4] = ["wave hand", "shake hand", "thumb up", "hug"];

fn names(list: &Value) -> Vec<String> {
    list.as_array().unwrap().iter().map(|a| a["name"].as_str().unwrap().to_string()).collect()
}

#[tokio::test]
async fn fresh_library_lists_nothing_on_both_ports() {
    let mut h = Harness::start(&[], MockBackend::default()).await;
    assert_eq!(h.get_json(h.user("/actions")).await, json!([]));
    assert_eq!(h.get_json(h.assistant("/actions")).await, json!([]));
    h.shutdown().await;
}

#[tokio::test]
async fn same_port_is_a_config_error() {
    let config = ServiceConfig { user_port: 18555, assistant_port: 18555, ..Default::default() };
    assert!(matches!(serve(config).await, Err(ServiceError::Config(_))));
}

#[tokio::test]
async fn busy_port_is_reported() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        user_port: port,
        assistant_port: 0,
        library_path: dir.path().join("a.json"),
        ..Default::default()
    };
    match serve(config).await {
        Err(ServiceError::PortInUse(p)) => assert_eq!(p, port),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("bound a taken port"),
    }
}

#[tokio::test]
async fn user_listing_hides_init() {
    let mut h = Harness::start(&GESTURES, MockBackend::default()).await;
    let user = names(&h.get_json(h.user("/actions")).await);
    assert_eq!(user.len(), 4);
    assert!(!user.contains(&"init".to_string()));
    let assistant = names(&h.get_json(h.assistant("/actions")).await);
    assert_eq!(assistant.len(), 5);
    let hits = names(&h.get_json(h.user("/actions?query=HAND")).await);
    assert_eq!(hits.len(), 2);
    h.shutdown().await;
}

#[tokio::test]
async fn role_guard_rejects_cross_port_calls() {
    let mut h = Harness::start(&GESTURES, MockBackend::default()).await;
    let r = h.post(h.user("/unlock")).await;
    assert_eq!(r.status(), 403);
    let body: Value = r.json().await.unwrap();
    assert_eq!(body["error"], "forbidden");
    assert_eq!(h.post(h.assistant("/stop")).await.status(), 403);
    assert_eq!(h.client.delete(h.user("/actions/hug")).send().await.unwrap().status(), 403);
    // the rejected delete left the action alone
    assert_eq!(names(&h.get_json(h.user("/actions")).await).len(), 4);
    h.shutdown().await;
}

#[tokio::test]
async fn play_runs_to_completion_and_updates_history() {
    let mut h = Harness::start(&GESTURES, MockBackend::default()).await;
    let r = h.post(h.user("/play/hug")).await;
    assert_eq!(r.status(), 202);
    let again = h.post(h.user("/play/wave%20hand")).await;
    assert_eq!(again.status(), 409);

    let state = h
        .wait_state(Duration::from_secs(5), |s| s["playback"]["phase"] == "completed")
        .await;
    assert_eq!(state["playback"]["name"], "hug");
    assert_eq!(state["safety"]["mode"], "Unlocked");

    let history = h.get_json(h.user("/history")).await;
    assert_eq!(history[0]["name"], "hug");
    let listed = h.get_json(h.user("/actions")).await;
    assert_eq!(listed[0]["name"], "hug", "most recently used comes first");
    assert!(listed[0]["last_used_at"].is_string());

    // use was persisted
    let on_disk = abc_core::memory::ActionLibrary::load(h.library_path()).unwrap();
    assert!(on_disk.get("hug").unwrap().last_used_at.is_some());
    h.shutdown().await;
}

#[tokio::test]
async fn unknown_action_is_not_found() {
    let mut h = Harness::start(&GESTURES, MockBackend::default()).await;
    assert_eq!(h.post(h.user("/play/moonwalk")).await.status(), 404);
    h.shutdown().await;
}

#[tokio::test]
async fn stop_locks_until_assistant_unlocks() {
    let mut h = Harness::start(&GESTURES, MockBackend::default()).await;
    assert_eq!(h.post(h.user("/play/hug")).await.status(), 202);
    let r = h.post(h.user("/stop")).await;
    assert_eq!(r.status(), 200);
    let safety: Value = r.json().await.unwrap();
    assert_eq!(safety["mode"], "Locked");
    assert_eq!(safety["reason"]["kind"], "tap_stop");

    // idempotent, first reason kept
    let r = h.client.post(h.user("/stop")).json(&json!({"source": "estop"})).send().await.unwrap();
    let safety: Value = r.json().await.unwrap();
    assert_eq!(safety["reason"]["kind"], "tap_stop");

    let state = h.wait_state(Duration::from_secs(1), |s| s["playback"]["phase"] == "interrupted").await;
    assert_eq!(state["playback"]["phase"], "interrupted");
    assert_eq!(state["arm"]["torque_enabled"], false);

    let r = h.post(h.user("/play/hug")).await;
    assert_eq!(r.status(), 409);
    assert_eq!(r.json::<Value>().await.unwrap()["error"], "locked");

    let r = h.post(h.assistant("/unlock")).await;
    assert_eq!(r.json::<Value>().await.unwrap()["mode"], "Unlocked");
    assert_eq!(h.post(h.assistant("/unlock")).await.status(), 409);
    assert_eq!(h.post(h.assistant("/actions/hug/play")).await.status(), 202);
    h.shutdown().await;
}

#[tokio::test]
async fn estop_from_assistant_uses_its_own_reason() {
    let mut h = Harness::start(&GESTURES, MockBackend::default()).await;
    let r = h.post(h.assistant("/estop")).await;
    assert_eq!(r.json::<Value>().await.unwrap()["reason"]["kind"], "estop_assistant");
    h.shutdown().await;
}

#[tokio::test]
async fn record_name_rename_delete() {
    let mut h = Harness::start(&[], MockBackend::default()).await;
    assert_eq!(h.post(h.assistant("/record/start")).await.status(), 200);
    assert_eq!(h.post(h.assistant("/record/start")).await.status(), 409);
    for k in 1..=6 {
        let positions = [0.05 * k as f64; 8];
        let r = h.client.post(h.assistant("/guide")).json(&json!({ "positions": positions })).send().await.unwrap();
        assert_eq!(r.status(), 200);
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    let stopped: Value = h.post(h.assistant("/record/stop")).await.json().await.unwrap();
    assert!(stopped["samples"].as_u64().unwrap() >= 5);
    let id = stopped["id"].as_str().unwrap().to_string();
    assert_eq!(h.get_json(h.assistant("/actions")).await, json!([]), "unnamed recordings are not listed");

    let r = h.client.post(h.assistant(&format!("/actions/{id}/name"))).json(&json!({"name": "nod"})).send().await.unwrap();
    assert_eq!(r.status(), 200);
    assert_eq!(names(&h.get_json(h.assistant("/actions")).await), ["nod"]);

    let r = h.client.post(h.assistant(&format!("/actions/{id}/name"))).json(&json!({"name": "bow"})).send().await.unwrap();
    assert_eq!(r.status(), 200);
    let lib = abc_core::memory::ActionLibrary::load(h.library_path()).unwrap();
    assert_eq!(lib.names(), ["bow"]);

    let r = h.client.delete(h.assistant("/actions/bow")).send().await.unwrap();
    assert_eq!(r.status(), 204);
    let r = h.client.delete(h.assistant("/actions/bow")).send().await.unwrap();
    assert_eq!(r.status(), 404);
    h.shutdown().await;
}

#[tokio::test]
async fn guide_rejects_out_of_limit_pose() {
    let mut h = Harness::start(&[], MockBackend::default()).await;
    let r = h.client.post(h.assistant("/guide")).json(&json!({ "positions": vec![9.0; 8] })).send().await.unwrap();
    assert_eq!(r.status(), 400);
    h.shutdown().await;
}

#[tokio::test]
async fn capture_returns_suggestions_and_keeps_no_image() {
    let image = fixture_image(1);
    let mut mock = MockBackend::default();
    mock.insert(&image, "hug, wave hand, thumb up");
    let mut h = Harness::start(&GESTURES, mock).await;

    let r = h.capture(image.clone()).await;
    assert_eq!(r.status(), 200);
    let result: Value = r.json().await.unwrap();
    assert_eq!(result["suggestions"], json!(["hug", "wave hand", "thumb up"]));
    let polled = h.get_json(h.user("/recommendation")).await;
    assert_eq!(polled["status"], "ready");
    assert_eq!(polled["result"]["suggestions"], result["suggestions"]);

    let calls = h.mock.calls();
    assert_eq!(calls.len(), 1);
    assert!(calls[0].prompt.contains("wave hand, shake hand, thumb up, hug"));
    assert_eq!(h.post(h.assistant("/capture")).await.status(), 403);
    h.shutdown().await;

    for entry in walkdir::WalkDir::new(h.dir.path()) {
        let entry = entry.unwrap();
        if entry.file_type().is_file() {
            let bytes = std::fs::read(entry.path()).unwrap();
            assert!(!bytes.windows(8).any(|w| w == &image[..8]), "{} holds image bytes", entry.path().display());
        }
    }
}

#[tokio::test]
async fn capture_needs_two_gestures() {
    let mut h = Harness::start(&["wave hand"], MockBackend::default()).await;
    let r = h.capture(fixture_image(1)).await;
    assert_eq!(r.status(), 409);
    assert_eq!(r.json::<Value>().await.unwrap()["error"], "library_too_small");
    h.shutdown().await;
}

#[tokio::test]
async fn capture_during_playback_is_busy() {
    let mut h = Harness::start(&GESTURES, MockBackend::default()).await;
    assert_eq!(h.post(h.user("/play/hug")).await.status(), 202);
    let r = h.capture(fixture_image(1)).await;
    assert_eq!(r.status(), 409);
    assert_eq!(r.json::<Value>().await.unwrap()["error"], "busy");
    h.shutdown().await;
}

#[tokio::test]
async fn backend_failure_is_reported_readably() {
    let mut h = Harness::start(&GESTURES, MockBackend::new(HashMap::new())).await;
    let r = h.capture(fixture_image(2)).await;
    assert_eq!(r.status(), 502);
    let body: Value = r.json().await.unwrap();
    assert_eq!(body["error"], "backend_error");
    assert_eq!(h.get_json(h.user("/recommendation")).await["status"], "failed");
    h.shutdown().await;
}

#[tokio::test]
async fn input_settings_are_validated() {
    let mut h = Harness::start(&[], MockBackend::default()).await;
    let ok = json!({"scan_interval_s": 0.5, "debounce_s": 0.1});
    let r = h.client.post(h.user("/settings/input")).json(&ok).send().await.unwrap();
    assert_eq!(r.status(), 200);
    assert_eq!(h.get_json(h.user("/settings/input")).await, ok);
    let bad = json!({"scan_interval_s": 0.05, "debounce_s": 0.1});
    let r = h.client.post(h.user("/settings/input")).json(&bad).send().await.unwrap();
    assert_eq!(r.status(), 400);
    h.shutdown().await;
}

#[tokio::test]
async fn history_is_capped_most_recent_first() {
    let mut h = Harness::start(&GESTURES, MockBackend::default()).await;
    // stop immediately after each start so plays do not overlap
    for i in 0..HISTORY_CAPACITY + 3 {
        let name = GESTURES[i % GESTURES.len()];
        let r = h.post(h.user(&format!("/play/{}", name.replace(' ', "%20")))).await;
        assert_eq!(r.status(), 202, "play {i}");
        h.post(h.user("/stop")).await;
        h.post(h.assistant("/unlock")).await;
    }
    let history = h.get_json(h.user("/history")).await;
    let history = history.as_array().unwrap();
    assert_eq!(history.len(), HISTORY_CAPACITY);
    assert_eq!(history[0]["name"], GESTURES[(HISTORY_CAPACITY + 2) % GESTURES.len()]);
    h.shutdown().await;
}

#[tokio::test]
async fn websocket_streams_sequenced_events() {
    let mut h = Harness::start(&GESTURES, MockBackend::default()).await;
    let mut ws = connect(&h.ws_url(true)).await;
    let mut seen = HashMap::<String, usize>::new();
    let mut last_seq = 0;
    let mut saw_trip = false;
    assert_eq!(h.post(h.user("/play/hug")).await.status(), 202);
    let mut stopped = false;
    while let Some(event) = next_event(&mut ws, Duration::from_secs(2)).await {
        let seq = event["seq"].as_u64().unwrap();
        assert!(seq > last_seq, "seq must increase");
        last_seq = seq;
        let kind = event["type"].as_str().unwrap().to_string();
        *seen.entry(kind.clone()).or_default() += 1;
        if kind == "playback" && !stopped {
            stopped = true;
            h.post(h.assistant("/estop")).await;
        }
        if kind == "safety" && event["payload"]["mode"] == "Locked" {
            assert_eq!(event["payload"]["reason"]["kind"], "estop_assistant");
            assert!(event["payload"]["since"].is_number());
            saw_trip = true;
            break;
        }
    }
    assert!(saw_trip);
    assert!(seen["arm"] > 0);
    assert!(seen["recommendation"] >= 1, "snapshot includes recommendation status");
    h.shutdown().await;
}

#[tokio::test]
async fn shutdown_leaves_torque_off() {
    let mut h = Harness::start(&GESTURES, MockBackend::default()).await;
    let mut ws = connect(&h.ws_url(false)).await;
    assert_eq!(h.post(h.user("/play/hug")).await.status(), 202);
    h.wait_state(Duration::from_secs(1), |s| s["arm"]["torque_enabled"] == true).await;
    h.shutdown().await;
    let mut last_arm = None;
    while let Some(event) = next_event(&mut ws, Duration::from_millis(500)).await {
        if event["type"] == "arm" {
            last_arm = Some(event);
        }
    }
    assert_eq!(last_arm.expect("arm events")["payload"]["torque_enabled"], false);
}

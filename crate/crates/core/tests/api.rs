mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chorus::api::{router, AppState, GroundingMode, GroundingSection, ProviderSection, ServiceConfig};
use chorus::clock::LogicalClock;
use chorus::engine::Engine;
use chorus::prompts::PromptCatalog;
use chorus::provider::{ChatProvider, ChatProviderRequest, ProviderError, ScriptedProvider};
use chorus::store::{FileStore, SessionConfig};
use common::*;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use std::sync::{Arc, Condvar, Mutex};
use tower::ServiceExt;

struct Service {
    app: Router,
    _dir: tempfile::TempDir,
}

fn service_with(provider: Arc<dyn ChatProvider>) -> Service {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::new(PromptCatalog::builtin(), provider, Arc::new(LogicalClock::new(0, 1)));
    let store = FileStore::open(dir.path()).unwrap();
    Service {
        app: router(AppState::new(engine, store, SessionConfig::default())),
        _dir: dir,
    }
}

fn service(completions: &[String]) -> Service {
    service_with(Arc::new(ScriptedProvider::new(completions.iter().cloned())))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call_raw(app, method, uri, body).await;
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn call_raw(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn create(app: &Router) -> String {
    let (status, body) = call(app, "POST", "/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    body["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn sessions_are_created_empty_and_distinct() {
    let svc = service(&[]);
    let a = create(&svc.app).await;
    let b = create(&svc.app).await;
    assert_ne!(a, b);
    let (status, state) = call(&svc.app, "GET", &format!("/sessions/{a}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(state["turn_count"], 0);
    assert_eq!(state["agents"], json!([]));
    assert_eq!(state["current_utterances"], json!([]));
    assert_eq!(state["index"], json!({"criteria": [], "options": []}));
    let (status, _) = call(&svc.app, "GET", "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn first_message_returns_agents_with_spans() {
    let svc = service(&[CAMERA_TURN1.to_string()]);
    let id = create(&svc.app).await;
    let (status, turn) = call(
        &svc.app,
        "POST",
        &format!("/sessions/{id}/messages"),
        Some(json!({"text": "I want a camera"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{turn}");
    let agents = turn["new_agents"].as_array().unwrap();
    assert!((3..=6).contains(&agents.len()));
    assert_eq!(agents[0]["name"], "Alex");
    assert!(agents[0]["color"].as_str().unwrap().starts_with('#'));
    let first = &turn["utterances"][0];
    let text: Vec<char> = first["text"].as_str().unwrap().chars().collect();
    for span in first["spans"].as_array().unwrap() {
        let (s, e) = (span["start"].as_u64().unwrap() as usize, span["end"].as_u64().unwrap() as usize);
        assert_eq!(text[s..e].iter().collect::<String>(), span["display"].as_str().unwrap());
    }
    assert!(turn["index_delta"].as_array().unwrap().iter().any(|e| e["key"] == "image quality"));
}

#[tokio::test]
async fn state_shows_only_the_latest_turn_and_transcript_recounts() {
    let two = format!("{}\n\n{}", reply("Alex", "More on %{durability}."), reply("Jamie", "Still %{lightweight}."));
    let svc = service(&[CAMERA_TURN1.to_string(), two]);
    let id = create(&svc.app).await;
    for text in ["hi", "more"] {
        let (status, _) = call(&svc.app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": text}))).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (_, state) = call(&svc.app, "GET", &format!("/sessions/{id}"), None).await;
    let current = state["current_utterances"].as_array().unwrap();
    assert_eq!(current.len(), 2);
    assert!(current.iter().all(|m| m["turn"] == 2 && m["current"] == true));

    let (_, transcript) = call(&svc.app, "GET", &format!("/sessions/{id}/transcript"), None).await;
    let messages = transcript["messages"].as_array().unwrap();
    // 2 user + 3 + 2 persona messages
    assert_eq!(messages.len(), 7);
    assert!(messages.iter().all(|m| m.get("pre_prompt").is_none()));
    let (_, audit) = call(&svc.app, "GET", &format!("/sessions/{id}/transcript?audit=true"), None).await;
    let first = &audit["messages"][0];
    assert!(first["pre_prompt"].as_str().unwrap().starts_with("[Current conversation state]"));
}

#[tokio::test]
async fn audit_transcript_includes_grounding_context() {
    let dir = tempfile::tempdir().unwrap();
    let fixture_path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/replay_camera.json");
    let config = ServiceConfig {
        data_dir: dir.path().to_path_buf(),
        provider: ProviderSection {
            fixture: Some(fixture_path.clone()),
            ..Default::default()
        },
        grounding: GroundingSection {
            mode: GroundingMode::Fixture,
            fixture: Some(fixture_path),
            ..Default::default()
        },
        ..Default::default()
    };
    let state = chorus::api::build_state(&config, &|_| None).unwrap();
    let app = router(state);
    let id = create(&app).await;
    let (status, turn) = call(&app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": "hi"}))).await;
    assert_eq!(status, StatusCode::OK, "{turn}");
    assert_eq!(turn["context_message_ids"].as_array().unwrap().len(), 3);
    let (_, plain) = call(&app, "GET", &format!("/sessions/{id}/transcript"), None).await;
    assert!(plain["messages"].as_array().unwrap().iter().all(|m| m["kind"] != "context"));
    let (_, audit) = call(&app, "GET", &format!("/sessions/{id}/transcript?audit=true"), None).await;
    let contexts = audit["messages"].as_array().unwrap().iter().filter(|m| m["kind"] == "context").count();
    assert_eq!(contexts, 3);
    let (_, state) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(state["agents"][0]["source_url"], "http://fixtures.local/canon-5d-iv/review");
}

#[tokio::test]
async fn pins_visibility_and_associations() {
    let svc = service(&[CAMERA_TURN1.to_string()]);
    let id = create(&svc.app).await;
    call(&svc.app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": "hi"}))).await;

    let (status, body) = call(&svc.app, "POST", &format!("/sessions/{id}/pins"), Some(json!({"kind": "criterion", "key": "easy to use"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["preferences"]["pinned_criteria"], json!(["easy to use"]));
    let (_, state) = call(&svc.app, "GET", &format!("/sessions/{id}"), None).await;
    let entry = state["index"]["criteria"].as_array().unwrap().iter().find(|e| e["key"] == "easy to use").unwrap().clone();
    assert_eq!(entry["pinned"], true);

    let (status, _) = call(&svc.app, "POST", &format!("/sessions/{id}/pins"), Some(json!({"kind": "agent", "key": "Jamie"}))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&svc.app, "POST", &format!("/sessions/{id}/pins"), Some(json!({"kind": "criterion", "key": "nothing"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _) = call(&svc.app, "DELETE", &format!("/sessions/{id}/pins/criterion/easy%20to%20use"), None).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&svc.app, "DELETE", &format!("/sessions/{id}/pins/criterion/easy%20to%20use"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&svc.app, "DELETE", &format!("/sessions/{id}/pins/planet/x"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (_, before) = call_raw(&svc.app, "GET", &format!("/sessions/{id}"), None).await;
    let (status, vis) = call(&svc.app, "POST", &format!("/sessions/{id}/visibility"), Some(json!({"key": "battery life", "hidden": true}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(vis["entries"][0]["hidden"], true);
    assert_eq!(vis["entries"][0]["count"], 2);
    call(&svc.app, "POST", &format!("/sessions/{id}/visibility"), Some(json!({"key": "battery life", "hidden": false}))).await;
    let (_, after) = call_raw(&svc.app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(before, after);

    let (status, assoc) = call(&svc.app, "GET", &format!("/sessions/{id}/associations?kind=criterion&key=battery%20life"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(assoc["agents"], json!(["agent-1", "agent-3"]));
    let (status, metrics) = call(&svc.app, "GET", &format!("/sessions/{id}/metrics"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(metrics["user_message_count"], 1);
    assert_eq!(metrics["pinned_total"], 1);
    assert_eq!(metrics["agent_count"], 3);
}

#[tokio::test]
async fn invalid_bodies_and_debates_are_422() {
    let svc = service(&[CAMERA_TURN1.to_string()]);
    let id = create(&svc.app).await;
    call(&svc.app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": "hi"}))).await;
    let (status, _) = call(&svc.app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": 5}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, body) = call(
        &svc.app,
        "POST",
        &format!("/sessions/{id}/messages"),
        Some(json!({"text": "", "tagged_agent_ids": ["agent-1"], "turn_kind": "debate"})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    let (status, _) = call(&svc.app, "POST", "/sessions/nope/messages", Some(json!({"text": "hi"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn failed_turns_are_502_and_leave_state_untouched() {
    let svc = service(&[CAMERA_TURN1.to_string(), "bad".into(), "worse".into(), "worst".into()]);
    let id = create(&svc.app).await;
    call(&svc.app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": "hi"}))).await;
    let (_, before) = call_raw(&svc.app, "GET", &format!("/sessions/{id}"), None).await;
    let (status, body) = call(&svc.app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": "again"}))).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["error"], "retries_exhausted");
    let (_, after) = call_raw(&svc.app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(before, after);
}

#[tokio::test]
async fn labels_attach_to_persona_messages() {
    let svc = service(&[CAMERA_TURN1.to_string()]);
    let id = create(&svc.app).await;
    let (_, turn) = call(&svc.app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": "hi"}))).await;
    let mid = turn["utterances"][0]["id"].as_u64().unwrap();
    let (status, m) = call(
        &svc.app,
        "POST",
        &format!("/sessions/{id}/messages/{mid}/labels"),
        Some(json!({"label": "self_contradiction"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(m["labels"], json!(["self_contradiction"]));
    let (status, _) = call(&svc.app, "POST", &format!("/sessions/{id}/messages/0/labels"), Some(json!({"label": "self_contradiction"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn streamed_turn_emits_progress_lines() {
    let svc = service(&["junk".into(), CAMERA_TURN1.to_string()]);
    let id = create(&svc.app).await;
    let (status, bytes) = call_raw(&svc.app, "POST", &format!("/sessions/{id}/messages?stream=true"), Some(json!({"text": "hi"}))).await;
    assert_eq!(status, StatusCode::OK);
    let lines: Vec<Value> = String::from_utf8(bytes)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let kinds: Vec<&str> = lines.iter().map(|l| l["event"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["started", "rejected", "retrying", "started", "accepted", "committed", "result"]);
    assert_eq!(lines.last().unwrap()["result"]["retries_used"], 1);
}

/// Blocks inside `complete` until released, so a turn stays in flight.
struct GateProvider {
    entered: Mutex<bool>,
    entered_cv: Condvar,
    release: Mutex<bool>,
    release_cv: Condvar,
}

impl ChatProvider for GateProvider {
    fn complete(&self, _: &ChatProviderRequest) -> Result<String, ProviderError> {
        *self.entered.lock().unwrap() = true;
        self.entered_cv.notify_all();
        let mut open = self.release.lock().unwrap();
        while !*open {
            open = self.release_cv.wait(open).unwrap();
        }
        Ok(CAMERA_TURN1.to_string())
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_message_is_409() {
    let gate = Arc::new(GateProvider {
        entered: Mutex::new(false),
        entered_cv: Condvar::new(),
        release: Mutex::new(false),
        release_cv: Condvar::new(),
    });
    let svc = service_with(gate.clone());
    let id = create(&svc.app).await;
    let app = svc.app.clone();
    let uri = format!("/sessions/{id}/messages");
    let first = tokio::spawn({
        let uri = uri.clone();
        async move { call(&app, "POST", &uri, Some(json!({"text": "hi"}))).await }
    });
    let g = gate.clone();
    tokio::task::spawn_blocking(move || {
        let mut entered = g.entered.lock().unwrap();
        while !*entered {
            entered = g.entered_cv.wait(entered).unwrap();
        }
    })
    .await
    .unwrap();

    let (status, body) = call(&svc.app, "POST", &uri, Some(json!({"text": "again"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "busy");
    let (status, _) = call(&svc.app, "POST", &format!("/sessions/{id}/pins"), Some(json!({"kind": "agent", "key": "x"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, state) = call(&svc.app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(state["turn_count"], 0);

    *gate.release.lock().unwrap() = true;
    gate.release_cv.notify_all();
    let (status, _) = first.await.unwrap();
    assert_eq!(status, StatusCode::OK);
    let (_, state) = call(&svc.app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(state["turn_count"], 1);
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let make = || {
        let engine = Engine::new(
            PromptCatalog::builtin(),
            Arc::new(ScriptedProvider::new([CAMERA_TURN1])),
            Arc::new(LogicalClock::new(0, 1)),
        );
        router(AppState::new(engine, FileStore::open(dir.path()).unwrap(), SessionConfig::default()))
    };
    let app = make();
    let id = create(&app).await;
    call(&app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": "hi"}))).await;
    let (_, before) = call_raw(&app, "GET", &format!("/sessions/{id}"), None).await;
    let restarted = make();
    let (status, after) = call_raw(&restarted, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before, after);
}

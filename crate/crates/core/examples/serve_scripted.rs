//! Starts the HTTP service with a scripted provider on a random port, runs
//! one turn through it with a plain HTTP client, and shuts down.

use chorus::api::{build_state, router, ProviderSection, ServiceConfig};
use std::path::PathBuf;

#[tokio::main]
async fn main() {
    let dir = std::env::temp_dir().join(format!("chorus-example-{}", std::process::id()));
    let config = ServiceConfig {
        data_dir: dir.clone(),
        provider: ProviderSection {
            fixture: Some(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/replay_camera.json")),
            ..Default::default()
        },
        ..Default::default()
    };
    let state = build_state(&config, &|_| None).unwrap();

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    println!("listening on {base}");

    let client = tokio::task::spawn_blocking(move || {
        let created: serde_json::Value = ureq::post(format!("{base}/sessions"))
            .send_empty()
            .unwrap()
            .body_mut()
            .read_json()
            .unwrap();
        let id = created["session_id"].as_str().unwrap().to_string();
        println!("session {id}");
        let turn: serde_json::Value = ureq::post(format!("{base}/sessions/{id}/messages"))
            .send_json(serde_json::json!({"text": "I need a new camera"}))
            .unwrap()
            .body_mut()
            .read_json()
            .unwrap();
        for a in turn["new_agents"].as_array().unwrap() {
            println!("  {} ({}) chose {}", a["name"], a["color"], a["chosen_option"]);
        }
        let metrics: serde_json::Value = ureq::get(format!("{base}/sessions/{id}/metrics"))
            .call()
            .unwrap()
            .body_mut()
            .read_json()
            .unwrap();
        println!("metrics {metrics}");
    });
    client.await.unwrap();
    let _ = std::fs::remove_dir_all(dir);
}

//! Replays the bundled five-turn session and prints its metrics and the
//! document digest. Running it twice prints the same digest.

use chorus::replay::{run_replay, ReplayFixture};
use std::path::Path;

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/replay_camera.json");
    let fixture = ReplayFixture::from_path(&path).unwrap();
    let outcome = run_replay(&fixture).unwrap();
    for t in &outcome.turns {
        let names: Vec<&str> = t.utterances.iter().map(|u| u.speaker_name.as_str()).collect();
        println!("turn {} (retries {}): {}", t.turn, t.retries_used, names.join(", "));
    }
    println!("{}", serde_json::to_string_pretty(&outcome.metrics).unwrap());
    let doc: serde_json::Value = serde_json::from_slice(&outcome.session.serialize()).unwrap();
    println!("sha256 {}", doc["sha256"].as_str().unwrap());
    let problems = outcome.check(&fixture.expect);
    println!("ledger: {}", if problems.is_empty() { "met".to_string() } else { problems.join("; ") });
}

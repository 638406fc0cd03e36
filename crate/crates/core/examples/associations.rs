//! Looks up which personas and keywords are linked to a criterion or an
//! option after the bundled replay.

use chorus::replay::{run_replay, ReplayFixture};
use chorus::store::KeywordKind;
use std::path::Path;

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/replay_camera.json");
    let s = run_replay(&ReplayFixture::from_path(&path).unwrap()).unwrap().session;
    for (kind, key) in [(KeywordKind::Criterion, "easy to use"), (KeywordKind::Option, "Sony Alpha a6000")] {
        let assoc = s.associations(kind, key).unwrap();
        let agents: Vec<&str> = assoc
            .agents
            .iter()
            .map(|id| s.registry.get(id).map(|a| a.name.as_str()).unwrap_or("?"))
            .collect();
        let related: Vec<&str> = assoc.related_keys.iter().map(|r| r.key.as_str()).collect();
        println!("{kind:?} {key:?}");
        println!("  personas: {agents:?}");
        println!("  related:  {related:?}");
    }
}

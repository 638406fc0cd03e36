//! Grounds an option from canned search results and pages, then injects
//! the excerpt into a session.

use chorus::clock::LogicalClock;
use chorus::engine::{Engine, UserTurnInput};
use chorus::grounding::{inject_grounding, Grounder, GroundingFixture};
use chorus::prompts::PromptCatalog;
use chorus::provider::ScriptedProvider;
use chorus::store::{KeywordRef, Session, SessionConfig};
use std::path::Path;
use std::sync::Arc;

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/replay_camera.json");
    let fixture = GroundingFixture::from_path(&path).unwrap();
    let (search, fetcher) = fixture.into_providers();
    let grounder = Grounder::new(Arc::new(search), Arc::new(fetcher)).with_budget(600);

    let clock = LogicalClock::new(0, 1);
    let bundle = grounder.ground_option("sony alpha a6000", "Sony Alpha a6000", &clock);
    for doc in &bundle.docs {
        println!("{:?} {} ({} chars)", doc.fetch_status, doc.url, doc.extracted_text.chars().count());
    }
    println!("primary link: {:?}", bundle.primary_url);
    println!("context ({} chars):\n{}\n", bundle.context.chars().count(), bundle.context);

    // a session that has seen the option, so the bundle can be attached
    let intros = "@{Jamie}(opinion): %{lightweight}, %{easy to use} and %{autofocus}: the &{Sony Alpha a6000}.%%%

@{Alex}(opinion): %{image quality}, %{durability} and %{battery life}: the &{Canon EOS 5D Mark IV}.%%%

@{Taylor}(opinion): %{portability}, %{battery life} and %{price}: the &{Fujifilm X-T3}.%%%";
    let engine = Engine::new(
        PromptCatalog::builtin(),
        Arc::new(ScriptedProvider::new([intros])),
        Arc::new(LogicalClock::new(0, 1)),
    );
    let mut s = Session::new("grounding", 0, SessionConfig::default());
    engine.process_turn(&mut s, &UserTurnInput::chat("camera?"), &()).unwrap();
    let id = inject_grounding(&mut s, bundle, 10).unwrap();
    println!("context message: {id:?}");
    println!("Jamie links to {:?}", s.registry.by_name("Jamie").unwrap().source_url);
    println!("index link: {:?}", s.index.get(&KeywordRef::option("sony alpha a6000")).unwrap().source_url);
}

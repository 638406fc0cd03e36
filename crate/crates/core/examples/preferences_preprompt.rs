//! Pins items into the preference space and shows how the toggle changes
//! the state summary sent ahead of the next user message.

use chorus::clock::LogicalClock;
use chorus::engine::{build_pre_prompt, Engine, UserTurnInput};
use chorus::prompts::PromptCatalog;
use chorus::provider::ScriptedProvider;
use chorus::store::{KeywordKind, PinKind, Session, SessionConfig};
use std::sync::Arc;

const INTROS: &str = "@{Alex}(opinion): I value %{image quality}, %{durability} and %{battery life}, so the &{Canon EOS 5D Mark IV}.%%%

@{Jamie}(opinion): %{lightweight}, %{easy to use} and %{autofocus}: the &{Sony Alpha a6000}.%%%

@{Taylor}(opinion): %{portability}, %{battery life} and %{price}. I use the &{Fujifilm X-T3}.%%%";

fn main() {
    let provider = Arc::new(ScriptedProvider::new([INTROS]));
    let engine = Engine::new(PromptCatalog::builtin(), provider, Arc::new(LogicalClock::new(0, 1)));
    let mut s = Session::new("prefs", 0, SessionConfig::default());
    engine.process_turn(&mut s, &UserTurnInput::chat("Help me pick a camera"), &()).unwrap();

    s.pin(PinKind::Criterion, "easy to use", 1).unwrap();
    s.pin(PinKind::Criterion, "Durability", 2).unwrap();
    s.pin(PinKind::Agent, "Jamie", 3).unwrap();
    s.set_hidden(Some(PinKind::Criterion), "price", true, 4).unwrap();

    println!("preference space: {}", serde_json::to_string_pretty(&s.preferences).unwrap());
    println!("pinned criteria for display: {:?}", s.pinned_displays(KeywordKind::Criterion));

    println!("\n--- toggle off ---\n{}", build_pre_prompt(&s, false).rendered);
    println!("\n--- toggle on ---\n{}", build_pre_prompt(&s, true).rendered);

    let req = engine.assemble_request(&s, &UserTurnInput::chat("Which is best for travel?").with_toggle(true));
    println!("\nnext request has {} messages; last one:\n{}", req.messages.len(), req.messages.last().unwrap().content);
}

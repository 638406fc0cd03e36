//! Drives three turns against a scripted provider: introductions, a tagged
//! follow-up, and a debate. Prints each turn and the resulting index.

use chorus::clock::LogicalClock;
use chorus::engine::{Engine, TurnEvent, UserTurnInput};
use chorus::prompts::PromptCatalog;
use chorus::provider::ScriptedProvider;
use chorus::store::{KeywordKind, Session, SessionConfig};
use std::sync::Arc;

const INTROS: &str = "@{Alex}(opinion): I shoot weddings, so I value %{image quality}, %{durability} and %{battery life}. I chose the &{Canon EOS 5D Mark IV}.%%%

@{Jamie}(opinion): I travel a lot. I want something %{lightweight}, %{easy to use} and with good %{autofocus}, like the &{Sony Alpha a6000}.%%%

@{Taylor}(opinion): %{portability}, %{battery life} and %{price} matter most to me. I use the &{Fujifilm X-T3}.%%%";

const FOLLOW_UP: &str = "@{Jamie}(opinion): The &{Sony Alpha a6000} weighs under 500 g, which is why %{lightweight} wins for me.%%%";

const DEBATE: &str = "@{Alex}(opinion): @{Jamie}, weight is nice but %{durability} saves a shoot in the rain.%%%

@{Jamie}(opinion): Fair, @{Alex}, but I carry mine every day. %{lightweight} still matters more.%%%";

fn main() {
    let provider = Arc::new(ScriptedProvider::new([INTROS, FOLLOW_UP, DEBATE]));
    let engine = Engine::new(PromptCatalog::builtin(), provider.clone(), Arc::new(LogicalClock::new(0, 1000)));
    let mut session = Session::new("demo", 0, SessionConfig::default());
    let log = |e: TurnEvent| eprintln!("  event: {}", serde_json::to_string(&e).unwrap());

    let r = engine.process_turn(&mut session, &UserTurnInput::chat("Which camera should I buy?"), &log).unwrap();
    println!("turn {}: {} new personas", r.turn, r.new_agents.len());
    for a in &r.new_agents {
        println!("  {} values {:?} and chose {}", a.name, a.valued_criteria, a.chosen_option);
    }

    let jamie = session.resolve_agent("Jamie").unwrap();
    let alex = session.resolve_agent("Alex").unwrap();
    let r = engine
        .process_turn(&mut session, &UserTurnInput::chat("Why that one?").tagging([jamie.clone()]), &log)
        .unwrap();
    println!("turn {}: {} spoke", r.turn, r.utterances.len());

    let r = engine.trigger_debate(&mut session, &[alex, jamie], "", &log).unwrap();
    println!("turn {}: debate with {} utterances", r.turn, r.utterances.len());

    for kind in [KeywordKind::Criterion, KeywordKind::Option] {
        for (key, entry) in session.index.entries(kind) {
            println!("{kind:?} {key:?}: {} mentions by {} personas", entry.count, entry.mentioning_agents.len());
        }
    }
    println!("{} requests sent", provider.requests().len());
}

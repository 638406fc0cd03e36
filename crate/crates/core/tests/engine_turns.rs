mod common;

use chorus::agents::TurnViolation;
use chorus::annotation::parse_completion;
use chorus::engine::{build_pre_prompt, EngineError, TurnEvent, TurnKind, UserTurnInput, PRE_PROMPT_OPEN};
use chorus::ids::AgentId;
use chorus::provider::ChatRole;
use chorus::store::{KeywordKind, PinKind};
use common::*;
use proptest::prelude::*;
use std::cell::RefCell;

#[test]
fn tennis_block_parses_but_kenneth_cannot_be_introduced() {
    let parsed = parse_completion(TENNIS_TURN);
    let speakers: Vec<_> = parsed.utterances.iter().map(|u| u.speaker_name.as_str()).collect();
    assert_eq!(speakers, ["Steven", "Gina", "Kenneth"]);

    // Kenneth names no option, so on a first turn the block is retried
    let (engine, provider) = scripted(&[TENNIS_TURN.to_string(), TENNIS_TURN.to_string(), TENNIS_TURN.to_string()]);
    let mut s = new_session();
    let err = engine.process_turn(&mut s, &UserTurnInput::chat("I want a tennis racket"), &()).unwrap_err();
    assert!(matches!(err, EngineError::RetriesExhausted { attempts: 3, ref reasons } if reasons.contains("option")));
    assert_eq!(provider.served(), 3);
    assert!(s.registry.is_empty());
}

#[test]
fn tennis_block_commits_when_kenneth_is_known() {
    let kenneth = "@{Kenneth}(opinion): I value %{control}, %{spin} and %{head speed}. I play with the &{Head Speed MP}.%%%";
    let gina_intro = "@{Ann}(opinion): I like %{comfort}, %{power} and %{price}, so I use the &{Yonex Ezone}.%%%";
    let ben_intro = "@{Ben}(opinion): I like %{weight}, %{grip} and %{power}, so I use the &{Prince Textreme}.%%%";
    let first = [kenneth, gina_intro, ben_intro].join("\n\n");
    let (engine, _) = scripted(&[first, TENNIS_TURN.to_string()]);
    let mut s = new_session();
    engine.process_turn(&mut s, &UserTurnInput::chat("rackets?"), &()).unwrap();
    let r = engine.process_turn(&mut s, &UserTurnInput::chat("thoughts on spin?"), &()).unwrap();
    let new: Vec<_> = r.new_agents.iter().map(|a| a.name.as_str()).collect();
    assert_eq!(new, ["Steven", "Gina"]);
    assert_eq!(s.registry.by_name("Steven").unwrap().chosen_option, "babolat pure aero");
    assert_eq!(s.registry.by_name("Gina").unwrap().valued_criteria, ["spin", "control", "stiff"]);
    let options: Vec<_> = s.index.entries(KeywordKind::Option).values().map(|e| e.display.clone()).collect();
    assert!(options.contains(&"Babolat Pure Aero".to_string()) && options.contains(&"Wilson Blade".to_string()));
    assert!(r.constraint_report.violations.contains(&TurnViolation::IntroUnderThreeCriteria));
}

/// A ten-turn conversation: one intro turn, then two-speaker replies.
fn ten_turns() -> Vec<String> {
    let mut out = vec![CAMERA_TURN1.to_string()];
    for i in 0..9 {
        out.push(format!(
            "{}\n\n{}",
            reply("Alex", &format!("Turn {i}: %{{durability}} still matters with the &{{Canon EOS 5D Mark IV}}.")),
            reply("Jamie", &format!("Turn {i}: I stay with the %{{lightweight}} choice.")),
        ));
    }
    out
}

#[test]
fn pre_prompts_are_ephemeral_and_request_sizes_recount() {
    let (engine, provider) = scripted(&ten_turns());
    let mut s = new_session();
    for i in 0..10 {
        engine
            .process_turn(&mut s, &UserTurnInput::chat(format!("question {i}")), &())
            .unwrap();
    }
    let requests = provider.requests();
    assert_eq!(requests.len(), 10);
    let mut visible_before = 0usize;
    let mut previous_renderings: Vec<String> = Vec::new();
    for (n, req) in requests.iter().enumerate() {
        assert_eq!(req.messages[0].role, ChatRole::System);
        let system_identity = req
            .messages
            .iter()
            .filter(|m| m.content.starts_with("Context and Your Identity:"))
            .count();
        assert_eq!(system_identity, 1);
        let scaffolds: usize = req.messages.iter().map(|m| m.content.matches(PRE_PROMPT_OPEN).count()).sum();
        assert_eq!(scaffolds, 1, "request {n}");
        assert!(req.messages.last().unwrap().content.starts_with(PRE_PROMPT_OPEN));
        for earlier in &previous_renderings {
            let history = &req.messages[..req.messages.len() - 1];
            assert!(history.iter().all(|m| !m.content.contains(earlier.as_str())));
        }
        assert_eq!(req.messages.len(), 1 + visible_before + 1);
        let user_msg = &req.messages.last().unwrap().content;
        previous_renderings.push(user_msg[..user_msg.find("\n\n").unwrap()].to_string());
        visible_before = s.messages.iter().filter(|m| m.display && m.turn <= n as u32 + 1).count();
    }
}

#[test]
fn toggle_changes_only_the_preference_section() {
    let (engine, _) = scripted(&[CAMERA_TURN1.to_string()]);
    let mut s = new_session();
    engine.process_turn(&mut s, &UserTurnInput::chat("hi"), &()).unwrap();
    s.pin(PinKind::Criterion, "easy to use", 2).unwrap();
    s.pin(PinKind::Option, "Sony Alpha a6000", 3).unwrap();

    let on = build_pre_prompt(&s, true);
    let off = build_pre_prompt(&s, false);
    assert_eq!(on.pinned_criteria.as_deref(), Some(&["easy to use".to_string()][..]));
    assert!(off.pinned_criteria.is_none());
    let start = on.rendered.find("[User preferences]").unwrap();
    let end = on.rendered.find("[End of conversation state]").unwrap();
    let mut spliced = on.rendered.clone();
    spliced.replace_range(start..end, "");
    assert_eq!(spliced, off.rendered);
    for item in on.all_criteria.iter().chain(&on.all_options).chain(&on.all_agents) {
        assert!(on.rendered.contains(item.as_str()));
        assert!(off.rendered.contains(item.as_str()));
    }
}

#[test]
fn tag_header_routes_only_tagged_agents() {
    let (engine, _) = scripted(&[CAMERA_TURN1.to_string()]);
    let mut s = new_session();
    engine.process_turn(&mut s, &UserTurnInput::chat("hi"), &()).unwrap();
    let jamie = s.resolve_agent("Jamie").unwrap();
    let taylor = s.resolve_agent("Taylor").unwrap();
    let input = UserTurnInput::chat("what do you think?").tagging([jamie, taylor]);
    let req = engine.assemble_request(&s, &input);
    let content = &req.messages.last().unwrap().content;
    let user_part = &content[content.find("[End of conversation state]\n\n").unwrap() + 29..];
    assert!(user_part.starts_with("@{Jamie} @{Taylor} what do you think?"));
    assert!(!user_part.contains("@{Alex}"));
}

#[test]
fn single_tagged_speaker_is_tolerated_but_untagged_single_is_reported() {
    let jamie_only = reply("Jamie", "It weighs about 344 grams, so it is %{lightweight}.");
    let (engine, _) = scripted(&[CAMERA_TURN1.to_string(), jamie_only.clone(), jamie_only]);
    let mut s = new_session();
    engine.process_turn(&mut s, &UserTurnInput::chat("hi"), &()).unwrap();
    let jamie = s.resolve_agent("Jamie").unwrap();
    let r = engine
        .process_turn(&mut s, &UserTurnInput::chat("how heavy?").tagging([jamie]), &())
        .unwrap();
    assert!(r.constraint_report.violations.is_empty());
    let r = engine.process_turn(&mut s, &UserTurnInput::chat("anyone?"), &()).unwrap();
    assert_eq!(r.constraint_report.violations, [TurnViolation::TooFewSpeakers]);
    assert_eq!(r.retries_used, 0);
}

#[test]
fn debate_turns() {
    let third = "@{Riley}(opinion): I'd add the %{easy to use} &{Canon EOS Rebel T7} to this debate, since %{price} and %{guided mode} matter too.%%%";
    let debate = format!(
        "{}\n\n{}\n\n{}",
        reply("Alex", "The &{Canon EOS 5D Mark IV} wins on %{durability}."),
        reply("Jamie", "The &{Sony Alpha a6000} wins on being %{lightweight}."),
        third
    );
    let (engine, _) = scripted(&[CAMERA_TURN1.to_string(), debate]);
    let mut s = new_session();
    engine.process_turn(&mut s, &UserTurnInput::chat("hi"), &()).unwrap();
    let ids = [s.resolve_agent("Alex").unwrap(), s.resolve_agent("Jamie").unwrap()];
    let err = engine.trigger_debate(&mut s, &ids[..1], "", &()).unwrap_err();
    assert!(matches!(err, EngineError::InvalidInput(_)));
    let r = engine.trigger_debate(&mut s, &ids, "", &()).unwrap();
    let speakers: Vec<_> = r.utterances.iter().map(|u| u.speaker_name.as_str()).collect();
    assert!(speakers.contains(&"Alex") && speakers.contains(&"Jamie"));
    assert_eq!(r.new_agents.len(), 1);
    assert!(r.warnings.iter().any(|w| w.code == "debate_new_agents"));
    let user = s.message(r.user_message_id).unwrap();
    assert!(user.content.starts_with("@{Alex} @{Jamie}"));
    assert!(user.content.contains("debate each other"));
}

#[test]
fn observer_sees_retry_then_commit() {
    let (engine, _) = scripted(&["nope".to_string(), CAMERA_TURN1.to_string()]);
    let mut s = new_session();
    let events = RefCell::new(Vec::new());
    let observer = |e: TurnEvent| events.borrow_mut().push(e);
    engine.process_turn(&mut s, &UserTurnInput::chat("hi"), &observer).unwrap();
    assert_eq!(
        events.into_inner(),
        [
            TurnEvent::Started { attempt: 0 },
            TurnEvent::Rejected { attempt: 0 },
            TurnEvent::Retrying { attempt: 1 },
            TurnEvent::Started { attempt: 1 },
            TurnEvent::Accepted { attempt: 1 },
            TurnEvent::Committed { turn: 1 },
        ]
    );
}

#[test]
fn corrective_note_is_dropped_after_success() {
    let two = format!("{}\n\n{}", reply("Alex", "Still %{durability}."), reply("Jamie", "Still %{lightweight}."));
    let (engine, provider) = scripted(&["nope".to_string(), CAMERA_TURN1.to_string(), two]);
    let mut s = new_session();
    engine.process_turn(&mut s, &UserTurnInput::chat("hi"), &()).unwrap();
    engine.process_turn(&mut s, &UserTurnInput::chat("more"), &()).unwrap();
    let reqs = provider.requests();
    assert!(reqs[1].messages.last().unwrap().content.contains("could not be used"));
    assert!(reqs[2].messages.iter().all(|m| !m.content.contains("could not be used")));
    assert_eq!(reqs[1].max_retries_remaining, 1);
}

#[test]
fn unknown_tagged_agent_is_invalid_input() {
    let (engine, provider) = scripted(&[]);
    let mut s = new_session();
    let input = UserTurnInput::chat("hi").tagging([AgentId::from("agent-9")]);
    assert!(matches!(engine.process_turn(&mut s, &input, &()), Err(EngineError::InvalidInput(_))));
    let input = UserTurnInput::default().kind(TurnKind::Chat);
    assert!(matches!(engine.process_turn(&mut s, &input, &()), Err(EngineError::InvalidInput(_))));
    assert_eq!(provider.served(), 0);
}

#[test]
fn replaying_the_same_inputs_is_byte_identical() {
    let run = || {
        let (engine, _) = scripted(&ten_turns());
        let mut s = new_session();
        for i in 0..10 {
            engine.process_turn(&mut s, &UserTurnInput::chat(format!("q{i}")), &()).unwrap();
        }
        s.serialize()
    };
    assert_eq!(run(), run());
}

fn completion_strategy() -> impl Strategy<Value = String> {
    prop_oneof![
        Just(CAMERA_TURN1.to_string()),
        Just(intros(&["A", "B"])),
        Just(intros(&["A", "B", "C", "D", "E", "F", "G"])),
        Just("no header at all".to_string()),
        Just(String::new()),
        "[ -~]{0,40}",
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Whatever the provider returns, a turn either commits or leaves the
    /// session byte-identical.
    #[test]
    fn failed_turns_are_atomic(completions in proptest::collection::vec(completion_strategy(), 1..4)) {
        let (engine, _) = scripted(&completions);
        let mut s = new_session();
        let before = s.serialize();
        match engine.process_turn(&mut s, &UserTurnInput::chat("hi"), &()) {
            Ok(r) => {
                prop_assert!((3..=6).contains(&r.new_agents.len()));
                prop_assert_eq!(index_counts(&s), brute_force_counts(&s));
            }
            Err(_) => prop_assert_eq!(s.serialize(), before),
        }
    }
}

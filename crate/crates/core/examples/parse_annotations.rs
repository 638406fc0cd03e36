//! Parses a three-persona completion and prints speakers, spans, and the
//! re-rendered text.

use chorus::annotation::{parse_completion, render_utterance, SpanKind};

const COMPLETION: &str = include_str!("../fixtures/tennis_turn.txt");

fn main() {
    let parsed = parse_completion(COMPLETION);
    for d in &parsed.diagnostics {
        println!("diagnostic: {d}");
    }
    for u in &parsed.utterances {
        println!("{} ({})", u.speaker_name, u.role_tag);
        println!("  criteria: {:?}", u.keys_of(SpanKind::Criterion));
        println!("  options:  {:?}", u.keys_of(SpanKind::Option));
        println!("  mentions: {:?}", u.keys_of(SpanKind::AgentMention));
        for span in &u.spans {
            println!("    [{}..{}] {:?} {:?}", span.start, span.end, span.kind, span.display_text);
        }
        let rendered = render_utterance(u).expect("spans come from the parser");
        println!("  rendered {} chars", rendered.chars().count());
    }
}

//! Turn execution: pre-prompt, request assembly, parse/validate/retry, and
//! atomic commit into a [`Session`].

use crate::agents::{extract_profile, validate_turn, AgentProfile, TurnConstraintReport, TurnContext, TurnViolation};
use crate::annotation::{normalize_keyword, parse_completion, render_utterance, ParseDiagnostic, ParsedUtterance};
use crate::clock::{Clock, FixedClock};
use crate::grounding::{inject_grounding, Grounder};
use crate::ids::{AgentId, MessageId};
use crate::prompts::PromptCatalog;
use crate::provider::{ChatMessage, ChatProvider, ChatProviderRequest, ChatRole, ProviderError};
use crate::store::{KeywordKind, KeywordRef, Message, MessageKind, Session, StoreError};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard};
use thiserror::Error;

pub const PRE_PROMPT_OPEN: &str = "[Current conversation state]";
pub const PRE_PROMPT_CLOSE: &str = "[End of conversation state]";
pub const PREFERENCES_HEADING: &str = "[User preferences]";
pub const DEBATE_PHRASE: &str = "Please debate each other about your choices.";
pub const INVITE_MORE_PHRASE: &str = "I want to hear about more criteria and options from new personas.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    #[default]
    Chat,
    Debate,
    InviteMore,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UserTurnInput {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub tagged_agent_ids: Vec<AgentId>,
    #[serde(default)]
    pub preference_toggle: bool,
    #[serde(default)]
    pub turn_kind: TurnKind,
}

impl UserTurnInput {
    pub fn chat(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Self::default()
        }
    }

    pub fn tagging(mut self, ids: impl IntoIterator<Item = AgentId>) -> Self {
        self.tagged_agent_ids = ids.into_iter().collect();
        self
    }

    pub fn with_toggle(mut self, on: bool) -> Self {
        self.preference_toggle = on;
        self
    }

    pub fn kind(mut self, kind: TurnKind) -> Self {
        self.turn_kind = kind;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrePrompt {
    pub all_criteria: Vec<String>,
    pub all_options: Vec<String>,
    pub all_agents: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pinned_criteria: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pinned_options: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pinned_agents: Option<Vec<String>>,
    pub rendered: String,
}

fn list_line(label: &str, items: &[String]) -> String {
    if items.is_empty() {
        format!("{label}: (none)\n")
    } else {
        format!("{label}: {}\n", items.join("; "))
    }
}

/// State summary for the next request. Hidden entries are included; pinned
/// lists only when `toggle` is on.
pub fn build_pre_prompt(session: &Session, toggle: bool) -> PrePrompt {
    let displays = |kind| {
        session
            .index
            .entries(kind)
            .values()
            .map(|e| e.display.clone())
            .collect::<Vec<_>>()
    };
    let all_criteria = displays(KeywordKind::Criterion);
    let all_options = displays(KeywordKind::Option);
    let all_agents: Vec<String> = session.registry.iter().map(|a| a.name.clone()).collect();

    let mut rendered = String::new();
    rendered.push_str(PRE_PROMPT_OPEN);
    rendered.push('\n');
    rendered.push_str("This summary is only for your reference. Do not repeat it in your reply.\n");
    rendered.push_str(&list_line("Criteria mentioned so far", &all_criteria));
    rendered.push_str(&list_line("Options mentioned so far", &all_options));
    rendered.push_str(&list_line("Personas in the conversation", &all_agents));

    let (pinned_criteria, pinned_options, pinned_agents) = if toggle {
        let c = session.pinned_displays(KeywordKind::Criterion);
        let o = session.pinned_displays(KeywordKind::Option);
        let a = session.pinned_agent_names();
        rendered.push_str(PREFERENCES_HEADING);
        rendered.push('\n');
        rendered.push_str("The user saved these items as important to them. Focus the conversation on them.\n");
        rendered.push_str(&list_line("Pinned criteria", &c));
        rendered.push_str(&list_line("Pinned options", &o));
        rendered.push_str(&list_line("Pinned personas", &a));
        (Some(c), Some(o), Some(a))
    } else {
        (None, None, None)
    };
    rendered.push_str(PRE_PROMPT_CLOSE);

    PrePrompt {
        all_criteria,
        all_options,
        all_agents,
        pinned_criteria,
        pinned_options,
        pinned_agents,
        rendered,
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("a turn is already in flight for this session")]
    Busy,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("completion rejected after {attempts} attempts: {reasons}")]
    RetriesExhausted { attempts: u32, reasons: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// The part of a user message that is kept in history: tag header, text,
/// and the turn-kind instruction.
pub fn user_content(session: &Session, input: &UserTurnInput) -> String {
    let mut out = String::new();
    for id in &input.tagged_agent_ids {
        if let Some(agent) = session.registry.get(id) {
            out.push_str(&format!("@{{{}}} ", agent.name));
        }
    }
    out.push_str(input.text.trim());
    let phrase = match input.turn_kind {
        TurnKind::Chat => None,
        TurnKind::Debate => Some(DEBATE_PHRASE),
        TurnKind::InviteMore => Some(INVITE_MORE_PHRASE),
    };
    if let Some(phrase) = phrase {
        if !out.is_empty() && !out.ends_with(' ') {
            out.push(' ');
        }
        out.push_str(phrase);
    }
    out.trim_end().to_string()
}

fn history_role(kind: MessageKind) -> ChatRole {
    match kind {
        MessageKind::User => ChatRole::User,
        MessageKind::Persona => ChatRole::Assistant,
        MessageKind::Context => ChatRole::System,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TurnEvent {
    Started { attempt: u32 },
    Rejected { attempt: u32 },
    Retrying { attempt: u32 },
    Accepted { attempt: u32 },
    Committed { turn: u32 },
}

/// Receives turn progress; used for streamed responses.
pub trait TurnObserver {
    fn on_event(&self, event: TurnEvent);
}

impl TurnObserver for () {
    fn on_event(&self, _: TurnEvent) {}
}

impl<F: Fn(TurnEvent)> TurnObserver for F {
    fn on_event(&self, event: TurnEvent) {
        self(event)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnWarning {
    pub code: String,
    pub detail: String,
}

impl TurnWarning {
    fn new(code: &str, detail: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnResult {
    pub turn: u32,
    pub user_message_id: MessageId,
    pub message_ids: Vec<MessageId>,
    pub utterances: Vec<ParsedUtterance>,
    pub new_agents: Vec<AgentProfile>,
    pub constraint_report: TurnConstraintReport,
    pub retries_used: u32,
    pub raw_completions: Vec<String>,
    pub diagnostics: Vec<ParseDiagnostic>,
    pub warnings: Vec<TurnWarning>,
    pub touched_keys: Vec<KeywordRef>,
    pub context_message_ids: Vec<MessageId>,
}

/// A completion that passed every rejecting check.
struct Accepted {
    utterances: Vec<ParsedUtterance>,
    diagnostics: Vec<ParseDiagnostic>,
    report: TurnConstraintReport,
}

fn judge(session: &Session, completion: &str, input: &UserTurnInput) -> Result<Accepted, Vec<String>> {
    let parsed = parse_completion(completion);
    let mut reasons: Vec<String> = parsed
        .diagnostics
        .iter()
        .filter(|d| d.is_error())
        .map(|d| d.to_string())
        .collect();
    if parsed.utterances.is_empty() {
        reasons.push("no utterance could be parsed".into());
    }
    let report = validate_turn(
        &session.registry,
        &parsed.utterances,
        TurnContext {
            is_first_turn: session.is_first_turn(),
            tagged: &input.tagged_agent_ids,
        },
    );
    reasons.extend(report.rejection_reasons().into_iter().map(describe_violation));
    if reasons.is_empty() {
        Ok(Accepted {
            utterances: parsed.utterances,
            diagnostics: parsed.diagnostics,
            report,
        })
    } else {
        Err(reasons)
    }
}

fn describe_violation(v: TurnViolation) -> String {
    match v {
        TurnViolation::TooFewFirstTurn => "the first response must introduce at least 3 personas".into(),
        TurnViolation::TooManyFirstTurn => "the first response may introduce at most 6 personas".into(),
        TurnViolation::TooManyNew => "at most 3 new personas may join in a single turn".into(),
        TurnViolation::TooFewSpeakers => "2 to 4 personas must speak in a turn".into(),
        TurnViolation::TooManySpeakers => "at most 4 personas may speak in a turn".into(),
        TurnViolation::IntroMissingOption => "every new persona must state its chosen option with &{...}".into(),
        TurnViolation::IntroMissingCriteria => "every new persona must state the criteria it values with %{...}".into(),
        TurnViolation::IntroUnderThreeCriteria => "new personas should state 3 valued criteria".into(),
    }
}

fn corrective_note(reasons: &[String]) -> String {
    format!(
        "Your previous response could not be used: {}. Respond to my last message again and follow every formatting rule. Each persona message must start with @{{Name}}(opinion): and end with %%%.",
        reasons.join("; ")
    )
}

/// Runs turns against one provider, sharing a prompt catalog and an
/// optional grounding pipeline.
#[derive(Clone)]
pub struct Engine {
    catalog: Arc<PromptCatalog>,
    provider: Arc<dyn ChatProvider>,
    grounder: Option<Grounder>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("grounder", &self.grounder)
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(catalog: PromptCatalog, provider: Arc<dyn ChatProvider>, clock: Arc<dyn Clock>) -> Self {
        Self {
            catalog: Arc::new(catalog),
            provider,
            grounder: None,
            clock,
        }
    }

    pub fn with_grounder(mut self, grounder: Grounder) -> Self {
        self.grounder = Some(grounder);
        self
    }

    pub fn catalog(&self) -> &PromptCatalog {
        &self.catalog
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn system_prompt(&self, session: &Session) -> String {
        self.catalog
            .build_system_prompt(session.config.domain_hint.as_deref())
    }

    /// System prompt, committed history, then the fresh pre-prompt plus the
    /// user's content as one user message.
    pub fn assemble_request(&self, session: &Session, input: &UserTurnInput) -> ChatProviderRequest {
        let pre = build_pre_prompt(session, input.preference_toggle);
        self.assemble_with(session, input, &pre, &[])
    }

    fn assemble_with(
        &self,
        session: &Session,
        input: &UserTurnInput,
        pre: &PrePrompt,
        notes: &[String],
    ) -> ChatProviderRequest {
        let mut messages = Vec::with_capacity(session.messages.len() + 2 + notes.len());
        messages.push(ChatMessage::new(ChatRole::System, self.system_prompt(session)));
        for m in &session.messages {
            messages.push(ChatMessage::new(history_role(m.kind), m.content.clone()));
        }
        messages.push(ChatMessage::new(
            ChatRole::User,
            format!("{}\n\n{}", pre.rendered, user_content(session, input)),
        ));
        for note in notes {
            messages.push(ChatMessage::new(ChatRole::System, note.clone()));
        }
        ChatProviderRequest {
            messages,
            model_hint: session.config.model_hint.clone(),
            max_retries_remaining: session.config.max_retries.saturating_sub(notes.len() as u32),
        }
    }

    pub fn check_input(&self, session: &Session, input: &UserTurnInput) -> Result<(), EngineError> {
        for id in &input.tagged_agent_ids {
            if !session.registry.contains(id) {
                return Err(EngineError::InvalidInput(format!("unknown agent {id}")));
            }
        }
        let distinct: indexmap::IndexSet<&AgentId> = input.tagged_agent_ids.iter().collect();
        if distinct.len() != input.tagged_agent_ids.len() {
            return Err(EngineError::InvalidInput("agent tagged twice".into()));
        }
        match input.turn_kind {
            TurnKind::Debate if input.tagged_agent_ids.len() < 2 => Err(EngineError::InvalidInput(
                "a debate needs at least 2 tagged agents".into(),
            )),
            TurnKind::Chat if input.text.trim().is_empty() => {
                Err(EngineError::InvalidInput("message text is empty".into()))
            }
            _ => Ok(()),
        }
    }

    /// Runs one user turn. On error `session` is left untouched.
    pub fn process_turn(
        &self,
        session: &mut Session,
        input: &UserTurnInput,
        observer: &dyn TurnObserver,
    ) -> Result<TurnResult, EngineError> {
        self.check_input(session, input)?;
        let pre = build_pre_prompt(session, input.preference_toggle);
        let max_retries = session.config.max_retries;
        let mut notes: Vec<String> = Vec::new();
        let mut raw_completions = Vec::new();
        let mut rejections: Vec<Vec<String>> = Vec::new();

        let accepted = loop {
            let attempt = raw_completions.len() as u32;
            observer.on_event(TurnEvent::Started { attempt });
            let request = self.assemble_with(session, input, &pre, &notes);
            let completion = self.provider.complete(&request)?;
            raw_completions.push(completion.clone());
            match judge(session, &completion, input) {
                Ok(accepted) => {
                    observer.on_event(TurnEvent::Accepted { attempt });
                    break accepted;
                }
                Err(reasons) => {
                    tracing::info!(attempt, ?reasons, "completion rejected");
                    observer.on_event(TurnEvent::Rejected { attempt });
                    if attempt >= max_retries {
                        return Err(EngineError::RetriesExhausted {
                            attempts: attempt + 1,
                            reasons: reasons.join("; "),
                        });
                    }
                    observer.on_event(TurnEvent::Retrying { attempt: attempt + 1 });
                    // only the latest corrective note is sent
                    notes = vec![corrective_note(&reasons)];
                    rejections.push(reasons);
                }
            }
        };

        let mut draft = session.clone();
        let result = self.commit(&mut draft, input, pre, accepted, raw_completions, rejections)?;
        *session = draft;
        observer.on_event(TurnEvent::Committed { turn: result.turn });
        Ok(result)
    }

    /// Debate between registered agents; new personas are tolerated.
    pub fn trigger_debate(
        &self,
        session: &mut Session,
        agent_ids: &[AgentId],
        text: &str,
        observer: &dyn TurnObserver,
    ) -> Result<TurnResult, EngineError> {
        let input = UserTurnInput {
            text: text.to_string(),
            tagged_agent_ids: agent_ids.to_vec(),
            preference_toggle: false,
            turn_kind: TurnKind::Debate,
        };
        self.process_turn(session, &input, observer)
    }

    fn commit(
        &self,
        s: &mut Session,
        input: &UserTurnInput,
        pre: PrePrompt,
        accepted: Accepted,
        raw_completions: Vec<String>,
        rejections: Vec<Vec<String>>,
    ) -> Result<TurnResult, EngineError> {
        let turn = s.turn_count + 1;
        let retries_used = rejections.len() as u32;
        for (attempt, reasons) in rejections.iter().enumerate() {
            let ts = self.clock.now_ms();
            s.log_event(ts, "retry", json!({"turn": turn, "attempt": attempt, "reasons": reasons}));
        }

        let user_id = s.allocate_message_id();
        let content = user_content(s, input);
        s.messages.push(Message {
            id: user_id,
            turn,
            kind: MessageKind::User,
            agent_id: None,
            speaker_name: None,
            content: content.clone(),
            display: true,
            utterance: None,
            pre_prompt: Some(pre.rendered),
            labels: Vec::new(),
        });
        let ts = self.clock.now_ms();
        s.log_event(
            ts,
            "user_message",
            json!({"message_id": user_id, "turn": turn, "turn_kind": input.turn_kind, "tagged": input.tagged_agent_ids, "preference_toggle": input.preference_toggle, "content": content}),
        );

        let mut warnings: Vec<TurnWarning> = accepted
            .diagnostics
            .iter()
            .map(|d| TurnWarning::new(d.code.as_str(), d.to_string()))
            .collect();
        for v in &accepted.report.violations {
            warnings.push(TurnWarning::new("constraint", describe_violation(*v)));
        }
        if input.turn_kind == TurnKind::Debate && accepted.report.new_agent_count > 0 {
            warnings.push(TurnWarning::new(
                "debate_new_agents",
                format!("{} new personas joined a debate turn", accepted.report.new_agent_count),
            ));
        }

        // message ids first so intros can be referenced by new profiles
        let mut message_ids = Vec::with_capacity(accepted.utterances.len());
        let mut new_profiles: Vec<AgentProfile> = Vec::new();
        for u in &accepted.utterances {
            let id = s.allocate_message_id();
            message_ids.push(id);
            let key = normalize_keyword(&u.speaker_name).unwrap_or_default();
            let known = s.registry.id_for_name(&key).is_some()
                || new_profiles
                    .iter()
                    .any(|p| normalize_keyword(&p.name).ok().as_deref() == Some(key.as_str()));
            if !known {
                let agent_id = s.allocate_agent_id();
                let extracted = extract_profile(u, turn, agent_id, id)
                    .map_err(|e| EngineError::InvalidInput(e.to_string()))?;
                new_profiles.push(extracted.profile);
            }
        }
        s.registry
            .register_agents(new_profiles.clone())
            .map_err(|e| EngineError::InvalidInput(e.to_string()))?;

        for (u, id) in accepted.utterances.iter().zip(&message_ids) {
            let agent_id = s.registry.id_for_name(&u.speaker_name).cloned();
            let content = render_utterance(u).unwrap_or_else(|_| u.plain_text.clone());
            s.messages.push(Message {
                id: *id,
                turn,
                kind: MessageKind::Persona,
                agent_id,
                speaker_name: Some(u.speaker_name.clone()),
                content,
                display: true,
                utterance: Some(u.clone()),
                pre_prompt: None,
                labels: Vec::new(),
            });
        }
        let touched_keys = s.index.update_index(&accepted.utterances, &s.registry);
        s.turn_count = turn;
        s.retry_count += retries_used;

        let ts = self.clock.now_ms();
        s.log_event(
            ts,
            "turn_committed",
            json!({
                "turn": turn,
                "retries_used": retries_used,
                "message_ids": message_ids,
                "new_agents": new_profiles.iter().map(|p| &p.agent_id).collect::<Vec<_>>(),
                "violations": accepted.report.violations,
            }),
        );

        let context_message_ids = self.ground_new_options(s, &new_profiles);

        Ok(TurnResult {
            turn,
            user_message_id: user_id,
            message_ids,
            utterances: accepted.utterances,
            new_agents: new_profiles
                .iter()
                .filter_map(|p| s.registry.get(&p.agent_id).cloned())
                .collect(),
            constraint_report: accepted.report,
            retries_used,
            raw_completions,
            diagnostics: accepted.diagnostics,
            warnings,
            touched_keys,
            context_message_ids,
        })
    }

    /// Grounds options chosen by new agents that have not been grounded
    /// before, in parallel, then injects the results in option order.
    fn ground_new_options(&self, s: &mut Session, new_agents: &[AgentProfile]) -> Vec<MessageId> {
        let Some(grounder) = &self.grounder else {
            return Vec::new();
        };
        let mut pending: Vec<(String, String)> = Vec::new();
        for agent in new_agents {
            let key = &agent.chosen_option;
            if let Some(bundle) = s.grounding.get(key) {
                // cached: share the hyperlink without fetching again
                if let Some(url) = bundle.primary_url.clone() {
                    if let Some(a) = s.registry.get_mut(&agent.agent_id) {
                        a.source_url = Some(url);
                    }
                }
                continue;
            }
            if pending.iter().any(|(k, _)| k == key) {
                continue;
            }
            let display = s
                .index
                .get(&KeywordRef::option(key.clone()))
                .map(|e| e.display.clone())
                .unwrap_or_else(|| key.clone());
            pending.push((key.clone(), display));
        }
        if pending.is_empty() {
            return Vec::new();
        }

        let grounder = grounder.clone().with_budget(s.config.grounding_budget);
        // one timestamp per option, taken in option order, so parallel
        // fetches stay reproducible under a logical clock
        let stamps: Vec<FixedClock> = pending.iter().map(|_| FixedClock(self.clock.now_ms())).collect();
        let bundles: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = pending
                .iter()
                .zip(&stamps)
                .map(|((key, display), clock)| {
                    let g = &grounder;
                    scope.spawn(move || g.ground_option(key, display, clock))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("grounding thread panicked"))
                .collect()
        });

        let mut ids = Vec::new();
        for bundle in bundles {
            let ts = self.clock.now_ms();
            match inject_grounding(s, bundle, ts) {
                Ok(Some(id)) => ids.push(id),
                Ok(None) => {}
                Err(err) => tracing::warn!(%err, "grounding not injected"),
            }
        }
        ids
    }
}

struct InFlight<'a>(&'a AtomicBool);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

/// Shared session with single-flight turns. Readers see the last committed
/// state while a turn runs on a private copy.
#[derive(Debug)]
pub struct SessionHandle {
    session: RwLock<Session>,
    in_flight: AtomicBool,
}

impl SessionHandle {
    pub fn new(session: Session) -> Self {
        Self {
            session: RwLock::new(session),
            in_flight: AtomicBool::new(false),
        }
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Session> {
        self.session.read().expect("session lock")
    }

    pub fn is_busy(&self) -> bool {
        self.in_flight.load(Ordering::SeqCst)
    }

    pub fn run_turn(
        &self,
        engine: &Engine,
        input: &UserTurnInput,
        observer: &dyn TurnObserver,
    ) -> Result<TurnResult, EngineError> {
        let mut draft = {
            let guard = self.session.write().expect("session lock");
            if self.in_flight.swap(true, Ordering::SeqCst) {
                return Err(EngineError::Busy);
            }
            guard.clone()
        };
        let _flight = InFlight(&self.in_flight);
        let result = engine.process_turn(&mut draft, input, observer)?;
        *self.session.write().expect("session lock") = draft;
        Ok(result)
    }

    /// Applies a non-turn mutation; refused while a turn is in flight.
    pub fn mutate<R>(&self, f: impl FnOnce(&mut Session) -> Result<R, StoreError>) -> Result<R, EngineError> {
        let mut guard = self.session.write().expect("session lock");
        if self.is_busy() {
            return Err(EngineError::Busy);
        }
        Ok(f(&mut guard)?)
    }
}

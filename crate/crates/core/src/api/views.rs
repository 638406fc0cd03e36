//! JSON shapes returned by the service. Utterances carry span offsets
//! (char indices into `text`) so clients can highlight without re-parsing.

use crate::agents::{AgentProfile, TurnConstraintReport};
use crate::annotation::{ParseDiagnostic, SpanKind};
use crate::engine::{TurnResult, TurnWarning};
use crate::ids::{AgentId, MessageId};
use crate::store::{HallucinationLabel, IndexEntry, KeywordKind, KeywordRef, Message, MessageKind, Metrics, PreferenceSpace, Session};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpanView {
    pub kind: SpanKind,
    pub start: usize,
    pub end: usize,
    pub key: String,
    pub display: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MessageView {
    pub id: MessageId,
    pub turn: u32,
    pub kind: MessageKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<AgentId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speaker_name: Option<String>,
    pub text: String,
    pub spans: Vec<SpanView>,
    pub current: bool,
    pub labels: Vec<HallucinationLabel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pre_prompt: Option<String>,
}

impl MessageView {
    pub fn new(m: &Message, current_turn: u32, audit: bool) -> Self {
        let (text, spans) = match &m.utterance {
            Some(u) => (
                u.plain_text.clone(),
                u.spans
                    .iter()
                    .map(|s| SpanView {
                        kind: s.kind,
                        start: s.start,
                        end: s.end,
                        key: s.canonical_key.clone(),
                        display: s.display_text.clone(),
                    })
                    .collect(),
            ),
            None => (m.content.clone(), Vec::new()),
        };
        Self {
            id: m.id,
            turn: m.turn,
            kind: m.kind,
            agent_id: m.agent_id.clone(),
            speaker_name: m.speaker_name.clone(),
            text,
            spans,
            current: m.kind == MessageKind::Persona && m.turn == current_turn,
            labels: m.labels.clone(),
            pre_prompt: if audit { m.pre_prompt.clone() } else { None },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AgentView {
    #[serde(flatten)]
    pub profile: AgentProfile,
    pub color: &'static str,
    pub hidden: bool,
    pub pinned: bool,
    pub utterance_count: usize,
}

impl AgentView {
    pub fn new(s: &Session, a: &AgentProfile) -> Self {
        Self {
            profile: a.clone(),
            color: a.color(),
            hidden: s.hidden_agents.contains(&a.agent_id),
            pinned: s.is_agent_pinned(&a.agent_id),
            utterance_count: s.utterance_count(&a.agent_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EntryView {
    pub kind: KeywordKind,
    pub key: String,
    pub display: String,
    pub count: u32,
    pub hidden: bool,
    pub pinned: bool,
    pub source_url: Option<String>,
    pub mentioning_agents: Vec<AgentId>,
    pub co_keys: Vec<KeywordRef>,
}

impl EntryView {
    pub fn new(key: &str, e: &IndexEntry) -> Self {
        Self {
            kind: e.kind,
            key: key.to_string(),
            display: e.display.clone(),
            count: e.count,
            hidden: e.hidden,
            pinned: e.pinned,
            source_url: e.source_url.clone(),
            mentioning_agents: e.mentioning_agents.iter().cloned().collect(),
            co_keys: e.co_keys.iter().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IndexView {
    pub criteria: Vec<EntryView>,
    pub options: Vec<EntryView>,
}

impl IndexView {
    pub fn new(s: &Session) -> Self {
        let list = |kind| {
            s.index
                .entries(kind)
                .iter()
                .map(|(k, e)| EntryView::new(k, e))
                .collect()
        };
        Self {
            criteria: list(KeywordKind::Criterion),
            options: list(KeywordKind::Option),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StateView {
    pub session_id: String,
    pub created_at: u64,
    pub turn_count: u32,
    pub current_utterances: Vec<MessageView>,
    pub agents: Vec<AgentView>,
    pub index: IndexView,
    pub preferences: PreferenceSpace,
    pub metrics: Metrics,
}

impl StateView {
    pub fn new(s: &Session) -> Self {
        Self {
            session_id: s.session_id.clone(),
            created_at: s.created_at,
            turn_count: s.turn_count,
            current_utterances: s
                .current_utterances()
                .map(|m| MessageView::new(m, s.turn_count, false))
                .collect(),
            agents: s.registry.iter().map(|a| AgentView::new(s, a)).collect(),
            index: IndexView::new(s),
            preferences: s.preferences.clone(),
            metrics: s.export_metrics(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TranscriptView {
    pub session_id: String,
    pub messages: Vec<MessageView>,
}

impl TranscriptView {
    /// Displayable messages; with `audit` also context messages and the
    /// pre-prompt that accompanied each user message.
    pub fn new(s: &Session, audit: bool) -> Self {
        Self {
            session_id: s.session_id.clone(),
            messages: s
                .messages
                .iter()
                .filter(|m| audit || m.display)
                .map(|m| MessageView::new(m, s.turn_count, audit))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TurnView {
    pub turn: u32,
    pub user_message_id: MessageId,
    pub utterances: Vec<MessageView>,
    pub new_agents: Vec<AgentView>,
    pub constraint_report: TurnConstraintReport,
    pub retries_used: u32,
    pub raw_completions: Vec<String>,
    pub diagnostics: Vec<ParseDiagnostic>,
    pub warnings: Vec<TurnWarning>,
    pub index_delta: Vec<EntryView>,
    pub context_message_ids: Vec<MessageId>,
}

impl TurnView {
    pub fn new(s: &Session, r: &TurnResult) -> Self {
        Self {
            turn: r.turn,
            user_message_id: r.user_message_id,
            utterances: r
                .message_ids
                .iter()
                .filter_map(|id| s.message(*id))
                .map(|m| MessageView::new(m, s.turn_count, false))
                .collect(),
            new_agents: r
                .new_agents
                .iter()
                .filter_map(|a| s.registry.get(&a.agent_id))
                .map(|a| AgentView::new(s, a))
                .collect(),
            constraint_report: r.constraint_report.clone(),
            retries_used: r.retries_used,
            raw_completions: r.raw_completions.clone(),
            diagnostics: r.diagnostics.clone(),
            warnings: r.warnings.clone(),
            index_delta: r
                .touched_keys
                .iter()
                .filter_map(|k| s.index.get(k).map(|e| EntryView::new(&k.key, e)))
                .collect(),
            context_message_ids: r.context_message_ids.clone(),
        }
    }
}

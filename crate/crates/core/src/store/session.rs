use super::index::{Associations, HistoryIndex, KeywordKind, KeywordRef};
use super::StoreError;
use crate::agents::AgentRegistry;
use crate::annotation::ParsedUtterance;
use crate::grounding::GroundingBundle;
use crate::ids::{AgentId, MessageId};
use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

/// Version of the persisted session document layout.
pub const DOCUMENT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    User,
    Persona,
    /// Grounding context: sent to the model, never shown as a bubble.
    Context,
}

/// Transcript labels for reviewing agent output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HallucinationLabel {
    /// Incorrect objective facts about an option.
    FactualInaccuracyObjective,
    /// Opinion about an option that contradicts its actual properties.
    FactualInaccuracySubjective,
    IrrelevantResponse,
    SelfContradiction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub id: MessageId,
    pub turn: u32,
    pub kind: MessageKind,
    pub agent_id: Option<AgentId>,
    pub speaker_name: Option<String>,
    /// Exactly what is replayed to the model in later requests.
    pub content: String,
    pub display: bool,
    pub utterance: Option<ParsedUtterance>,
    /// Pre-prompt that accompanied a user message; audit only.
    pub pre_prompt: Option<String>,
    #[serde(default)]
    pub labels: Vec<HallucinationLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub domain_hint: Option<String>,
    pub model_hint: String,
    pub max_retries: u32,
    pub grounding_budget: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            domain_hint: None,
            model_hint: "gpt-4-0613".to_string(),
            max_retries: 2,
            grounding_budget: crate::grounding::DEFAULT_BUDGET_CHARS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub ts: u64,
    pub session_id: String,
    pub kind: String,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PinKind {
    Agent,
    Criterion,
    Option,
}

impl PinKind {
    pub fn keyword_kind(self) -> Option<KeywordKind> {
        match self {
            PinKind::Agent => None,
            PinKind::Criterion => Some(KeywordKind::Criterion),
            PinKind::Option => Some(KeywordKind::Option),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PinKind::Agent => "agent",
            PinKind::Criterion => "criterion",
            PinKind::Option => "option",
        }
    }
}

impl std::str::FromStr for PinKind {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "agent" => Ok(PinKind::Agent),
            "criterion" => Ok(PinKind::Criterion),
            "option" => Ok(PinKind::Option),
            other => Err(StoreError::UnknownKind(other.to_string())),
        }
    }
}

/// The user's saved agents and keywords, in pin order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceSpace {
    pub pinned_agents: Vec<AgentId>,
    pub pinned_criteria: Vec<String>,
    pub pinned_options: Vec<String>,
}

impl PreferenceSpace {
    pub fn total(&self) -> usize {
        self.pinned_agents.len() + self.pinned_criteria.len() + self.pinned_options.len()
    }

    fn keys_mut(&mut self, kind: KeywordKind) -> &mut Vec<String> {
        match kind {
            KeywordKind::Criterion => &mut self.pinned_criteria,
            KeywordKind::Option => &mut self.pinned_options,
        }
    }
}

/// Flat counters exported for analysis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub user_message_count: usize,
    pub pinned_total: usize,
    pub pinned_agents: usize,
    pub pinned_criteria: usize,
    pub pinned_options: usize,
    pub agent_count: usize,
    pub turn_count: u32,
    pub retry_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub created_at: u64,
    pub config: SessionConfig,
    pub messages: Vec<Message>,
    pub registry: AgentRegistry,
    pub index: HistoryIndex,
    pub preferences: PreferenceSpace,
    pub hidden_agents: IndexSet<AgentId>,
    /// Grounding results by option key; doubles as the per-session cache.
    pub grounding: IndexMap<String, GroundingBundle>,
    pub events: Vec<EventRecord>,
    pub turn_count: u32,
    pub retry_count: u32,
    next_message_id: u64,
    next_agent_seq: u64,
}

#[derive(Serialize)]
struct DocumentOut<'a> {
    version: u32,
    sha256: String,
    session: &'a Session,
}

#[derive(Deserialize)]
struct DocumentIn {
    version: u32,
    sha256: String,
    session: serde_json::Value,
}

impl Session {
    pub fn new(session_id: impl Into<String>, created_at: u64, config: SessionConfig) -> Self {
        let mut session = Self {
            session_id: session_id.into(),
            created_at,
            config,
            messages: Vec::new(),
            registry: AgentRegistry::new(),
            index: HistoryIndex::new(),
            preferences: PreferenceSpace::default(),
            hidden_agents: IndexSet::new(),
            grounding: IndexMap::new(),
            events: Vec::new(),
            turn_count: 0,
            retry_count: 0,
            next_message_id: 0,
            next_agent_seq: 0,
        };
        session.log_event(created_at, "session_created", json!({}));
        session
    }

    pub fn is_first_turn(&self) -> bool {
        self.turn_count == 0
    }

    pub fn allocate_message_id(&mut self) -> MessageId {
        let id = MessageId(self.next_message_id);
        self.next_message_id += 1;
        id
    }

    pub fn allocate_agent_id(&mut self) -> AgentId {
        self.next_agent_seq += 1;
        AgentId(format!("agent-{}", self.next_agent_seq))
    }

    pub fn log_event(&mut self, ts: u64, kind: &str, payload: serde_json::Value) {
        self.events.push(EventRecord {
            ts,
            session_id: self.session_id.clone(),
            kind: kind.to_string(),
            payload,
        });
    }

    pub fn message(&self, id: MessageId) -> Option<&Message> {
        self.messages.iter().find(|m| m.id == id)
    }

    /// User and persona messages, in order.
    pub fn displayable_messages(&self) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(|m| m.display)
    }

    /// Persona messages of the most recent committed turn.
    pub fn current_utterances(&self) -> impl Iterator<Item = &Message> {
        let turn = self.turn_count;
        self.messages
            .iter()
            .filter(move |m| m.kind == MessageKind::Persona && m.turn == turn && turn > 0)
    }

    pub fn label_message(&mut self, id: MessageId, label: HallucinationLabel, ts: u64) -> Result<(), StoreError> {
        let msg = self
            .messages
            .iter_mut()
            .find(|m| m.id == id)
            .ok_or(StoreError::UnknownMessage(id))?;
        if msg.kind != MessageKind::Persona {
            return Err(StoreError::UnknownMessage(id));
        }
        if !msg.labels.contains(&label) {
            msg.labels.push(label);
        }
        self.log_event(ts, "label", json!({"message_id": id, "label": label}));
        Ok(())
    }

    /// Resolves an agent reference given as id or name.
    pub fn resolve_agent(&self, key: &str) -> Option<AgentId> {
        let id = AgentId(key.to_string());
        if self.registry.contains(&id) {
            return Some(id);
        }
        self.registry.id_for_name(key).cloned()
    }

    fn resolve_keyword(&self, kind: KeywordKind, key: &str) -> Result<KeywordRef, StoreError> {
        self.index
            .resolve(Some(kind), key)
            .into_iter()
            .next()
            .ok_or_else(|| StoreError::UnknownKey(key.to_string()))
    }

    /// Adds a pin. Returns `false` when it was already pinned.
    pub fn pin(&mut self, kind: PinKind, key: &str, ts: u64) -> Result<bool, StoreError> {
        let changed = match kind.keyword_kind() {
            None => {
                let id = self
                    .resolve_agent(key)
                    .ok_or_else(|| StoreError::UnknownKey(key.to_string()))?;
                if self.preferences.pinned_agents.contains(&id) {
                    false
                } else {
                    self.preferences.pinned_agents.push(id);
                    true
                }
            }
            Some(kw) => {
                let r = self.resolve_keyword(kw, key)?;
                let list = self.preferences.keys_mut(kw);
                if list.contains(&r.key) {
                    false
                } else {
                    list.push(r.key.clone());
                    self.index.set_pinned(&r, true)?;
                    true
                }
            }
        };
        if changed {
            self.log_event(ts, "pin", json!({"kind": kind, "key": key}));
        }
        Ok(changed)
    }

    /// Removes a pin. Returns `false` when the key exists but was not pinned.
    pub fn unpin(&mut self, kind: PinKind, key: &str, ts: u64) -> Result<bool, StoreError> {
        let changed = match kind.keyword_kind() {
            None => {
                let id = self
                    .resolve_agent(key)
                    .ok_or_else(|| StoreError::UnknownKey(key.to_string()))?;
                let before = self.preferences.pinned_agents.len();
                self.preferences.pinned_agents.retain(|a| *a != id);
                before != self.preferences.pinned_agents.len()
            }
            Some(kw) => {
                let r = self.resolve_keyword(kw, key)?;
                let list = self.preferences.keys_mut(kw);
                let before = list.len();
                list.retain(|k| *k != r.key);
                let changed = before != list.len();
                self.index.set_pinned(&r, false)?;
                changed
            }
        };
        if changed {
            self.log_event(ts, "unpin", json!({"kind": kind, "key": key}));
        }
        Ok(changed)
    }

    pub fn is_agent_pinned(&self, id: &AgentId) -> bool {
        self.preferences.pinned_agents.contains(id)
    }

    /// Sets the presentation-only hidden flag. With `kind = None` every
    /// keyword entry matching `key` is affected.
    pub fn set_hidden(&mut self, kind: Option<PinKind>, key: &str, hidden: bool, ts: u64) -> Result<(), StoreError> {
        match kind {
            Some(PinKind::Agent) => {
                let id = self
                    .resolve_agent(key)
                    .ok_or_else(|| StoreError::UnknownKey(key.to_string()))?;
                if hidden {
                    self.hidden_agents.insert(id);
                } else {
                    self.hidden_agents.shift_remove(&id);
                }
            }
            other => {
                let refs = self
                    .index
                    .resolve(other.and_then(PinKind::keyword_kind), key);
                if refs.is_empty() {
                    return Err(StoreError::UnknownKey(key.to_string()));
                }
                for r in &refs {
                    self.index.set_hidden(r, hidden)?;
                }
            }
        }
        self.log_event(ts, "visibility", json!({"kind": kind, "key": key, "hidden": hidden}));
        Ok(())
    }

    pub fn associations(&self, kind: KeywordKind, key: &str) -> Result<Associations, StoreError> {
        let r = self.resolve_keyword(kind, key)?;
        self.index.associations(&self.registry, &r)
    }

    pub fn export_metrics(&self) -> Metrics {
        let p = &self.preferences;
        Metrics {
            user_message_count: self
                .messages
                .iter()
                .filter(|m| m.kind == MessageKind::User)
                .count(),
            pinned_total: p.total(),
            pinned_agents: p.pinned_agents.len(),
            pinned_criteria: p.pinned_criteria.len(),
            pinned_options: p.pinned_options.len(),
            agent_count: self.registry.len(),
            turn_count: self.turn_count,
            retry_count: self.retry_count,
        }
    }

    /// Pretty JSON document guarded by a digest of the session body.
    pub fn serialize(&self) -> Vec<u8> {
        let body = serde_json::to_vec(self).expect("session serializes");
        let doc = DocumentOut {
            version: DOCUMENT_VERSION,
            sha256: hex_digest(&body),
            session: self,
        };
        let mut out = serde_json::to_vec_pretty(&doc).expect("document serializes");
        out.push(b'\n');
        out
    }

    pub fn load(bytes: &[u8]) -> Result<Self, StoreError> {
        let doc: DocumentIn =
            serde_json::from_slice(bytes).map_err(|e| StoreError::CorruptDocument(e.to_string()))?;
        if doc.version != DOCUMENT_VERSION {
            return Err(StoreError::VersionMismatch {
                found: doc.version,
                expected: DOCUMENT_VERSION,
            });
        }
        let session: Session = serde_json::from_value(doc.session)
            .map_err(|e| StoreError::CorruptDocument(e.to_string()))?;
        let body = serde_json::to_vec(&session).expect("session serializes");
        if hex_digest(&body) != doc.sha256 {
            return Err(StoreError::CorruptDocument("digest mismatch".into()));
        }
        session.check_integrity()?;
        Ok(session)
    }

    fn check_integrity(&self) -> Result<(), StoreError> {
        if !self.registry.is_consistent() {
            return Err(StoreError::CorruptDocument("agent registry is inconsistent".into()));
        }
        let dangling = self.index.iter().any(|(_, e)| {
            e.mentioning_agents.iter().any(|a| !self.registry.contains(a))
        });
        if dangling {
            return Err(StoreError::CorruptDocument("index references unknown agents".into()));
        }
        Ok(())
    }

    /// Display forms of the user's pinned keywords, in pin order.
    pub fn pinned_displays(&self, kind: KeywordKind) -> Vec<String> {
        let keys = match kind {
            KeywordKind::Criterion => &self.preferences.pinned_criteria,
            KeywordKind::Option => &self.preferences.pinned_options,
        };
        keys.iter()
            .filter_map(|k| self.index.get(&KeywordRef::new(kind, k.clone())))
            .map(|e| e.display.clone())
            .collect()
    }

    pub fn pinned_agent_names(&self) -> Vec<String> {
        self.preferences
            .pinned_agents
            .iter()
            .filter_map(|id| self.registry.get(id))
            .map(|a| a.name.clone())
            .collect()
    }

    /// Number of committed persona utterances per agent.
    pub fn utterance_count(&self, id: &AgentId) -> usize {
        self.messages
            .iter()
            .filter(|m| m.kind == MessageKind::Persona && m.agent_id.as_ref() == Some(id))
            .count()
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

//! Headless replay of a scripted session: user turns with canned
//! completions, pin/visibility actions in between, and offline grounding.

use crate::clock::{Clock, LogicalClock};
use crate::engine::{Engine, EngineError, TurnKind, TurnResult, UserTurnInput};
use crate::grounding::{Grounder, GroundingFixture};
use crate::ids::AgentId;
use crate::prompts::PromptCatalog;
use crate::provider::ScriptedProvider;
use crate::store::{Metrics, PinKind, Session, SessionConfig, StoreError};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

pub const DEFAULT_ORIGIN_MS: u64 = 1_700_000_000_000;
pub const CLOCK_STEP_MS: u64 = 1_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedMessage {
    #[serde(default)]
    pub text: String,
    /// Agents by id or name.
    #[serde(default)]
    pub tagged: Vec<String>,
    #[serde(default)]
    pub preference_toggle: bool,
    #[serde(default)]
    pub turn_kind: TurnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyAction {
    pub kind: PinKind,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibilityAction {
    #[serde(default)]
    pub kind: Option<PinKind>,
    pub key: String,
    pub hidden: bool,
}

/// One fixture step. On disk each step is an object with exactly one of the
/// keys `message` (plus `completions`), `pin`, `unpin`, `visibility`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayStep {
    Message {
        message: ScriptedMessage,
        completions: Vec<String>,
    },
    Pin(KeyAction),
    Unpin(KeyAction),
    Visibility(VisibilityAction),
}

#[derive(Deserialize, Serialize)]
struct StepRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    message: Option<ScriptedMessage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    completions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pin: Option<KeyAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    unpin: Option<KeyAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    visibility: Option<VisibilityAction>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedMetrics {
    pub user_message_count: Option<usize>,
    pub pinned_total: Option<usize>,
    pub agent_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayFixture {
    pub session_id: String,
    #[serde(default = "default_origin")]
    pub origin_ms: u64,
    #[serde(default)]
    pub config: SessionConfig,
    #[serde(default)]
    pub grounding: Option<GroundingFixture>,
    #[serde(with = "steps_format")]
    pub steps: Vec<ReplayStep>,
    #[serde(default)]
    pub expect: ExpectedMetrics,
}

fn default_origin() -> u64 {
    DEFAULT_ORIGIN_MS
}

mod steps_format {
    use super::*;
    use serde::de::Error as _;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(steps: &[ReplayStep], s: S) -> Result<S::Ok, S::Error> {
        let reprs: Vec<StepRepr> = steps
            .iter()
            .map(|step| {
                let mut r = StepRepr {
                    message: None,
                    completions: Vec::new(),
                    pin: None,
                    unpin: None,
                    visibility: None,
                };
                match step.clone() {
                    ReplayStep::Message { message, completions } => {
                        r.message = Some(message);
                        r.completions = completions;
                    }
                    ReplayStep::Pin(a) => r.pin = Some(a),
                    ReplayStep::Unpin(a) => r.unpin = Some(a),
                    ReplayStep::Visibility(v) => r.visibility = Some(v),
                }
                r
            })
            .collect();
        reprs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<ReplayStep>, D::Error> {
        let reprs = Vec::<StepRepr>::deserialize(d)?;
        reprs
            .into_iter()
            .enumerate()
            .map(|(i, r)| match (r.message, r.pin, r.unpin, r.visibility) {
                (Some(message), None, None, None) => Ok(ReplayStep::Message {
                    message,
                    completions: r.completions,
                }),
                (None, Some(a), None, None) => Ok(ReplayStep::Pin(a)),
                (None, None, Some(a), None) => Ok(ReplayStep::Unpin(a)),
                (None, None, None, Some(v)) => Ok(ReplayStep::Visibility(v)),
                _ => Err(D::Error::custom(format!(
                    "step {i} must have exactly one of message, pin, unpin, visibility"
                ))),
            })
            .collect()
    }
}

impl ReplayFixture {
    pub fn from_path(path: &Path) -> Result<Self, ReplayError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ReplayError> {
        serde_json::from_str(text).map_err(|e| ReplayError::Fixture(e.to_string()))
    }

    /// Every canned completion in request order.
    pub fn completions(&self) -> Vec<String> {
        self.steps
            .iter()
            .flat_map(|s| match s {
                ReplayStep::Message { completions, .. } => completions.clone(),
                _ => Vec::new(),
            })
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot read fixture: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid fixture: {0}")]
    Fixture(String),
    #[error("step {step}: {source}")]
    Turn { step: usize, source: EngineError },
    #[error("step {step}: {source}")]
    Action { step: usize, source: StoreError },
    #[error("step {step}: unknown agent {name}")]
    UnknownAgent { step: usize, name: String },
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub session: Session,
    pub turns: Vec<TurnResult>,
    pub metrics: Metrics,
}

impl ReplayOutcome {
    /// Mismatches against the fixture's `expect` block, as readable lines.
    pub fn check(&self, expect: &ExpectedMetrics) -> Vec<String> {
        let mut out = Vec::new();
        let m = &self.metrics;
        let pairs = [
            ("user_message_count", expect.user_message_count, m.user_message_count),
            ("pinned_total", expect.pinned_total, m.pinned_total),
            ("agent_count", expect.agent_count, m.agent_count),
        ];
        for (name, want, got) in pairs {
            if let Some(want) = want {
                if want != got {
                    out.push(format!("{name}: expected {want}, got {got}"));
                }
            }
        }
        out
    }
}

/// Runs the fixture with the built-in prompt catalog.
pub fn run_replay(fixture: &ReplayFixture) -> Result<ReplayOutcome, ReplayError> {
    run_replay_with(fixture, PromptCatalog::builtin())
}

pub fn run_replay_with(fixture: &ReplayFixture, catalog: PromptCatalog) -> Result<ReplayOutcome, ReplayError> {
    let clock = Arc::new(LogicalClock::new(fixture.origin_ms, CLOCK_STEP_MS));
    let provider = Arc::new(ScriptedProvider::new(fixture.completions()));
    let mut engine = Engine::new(catalog, provider, clock.clone());
    if let Some(g) = &fixture.grounding {
        let (search, fetcher) = g.clone().into_providers();
        engine = engine.with_grounder(Grounder::new(Arc::new(search), Arc::new(fetcher)));
    }
    let mut session = Session::new(fixture.session_id.clone(), clock.now_ms(), fixture.config.clone());
    let mut turns = Vec::new();

    for (step, s) in fixture.steps.iter().enumerate() {
        match s {
            ReplayStep::Message { message, .. } => {
                let tagged = message
                    .tagged
                    .iter()
                    .map(|name| {
                        session.resolve_agent(name).ok_or_else(|| ReplayError::UnknownAgent {
                            step,
                            name: name.clone(),
                        })
                    })
                    .collect::<Result<Vec<AgentId>, _>>()?;
                let input = UserTurnInput {
                    text: message.text.clone(),
                    tagged_agent_ids: tagged,
                    preference_toggle: message.preference_toggle,
                    turn_kind: message.turn_kind,
                };
                let result = engine
                    .process_turn(&mut session, &input, &())
                    .map_err(|source| ReplayError::Turn { step, source })?;
                turns.push(result);
            }
            ReplayStep::Pin(a) => {
                session
                    .pin(a.kind, &a.key, clock.now_ms())
                    .map_err(|source| ReplayError::Action { step, source })?;
            }
            ReplayStep::Unpin(a) => {
                session
                    .unpin(a.kind, &a.key, clock.now_ms())
                    .map_err(|source| ReplayError::Action { step, source })?;
            }
            ReplayStep::Visibility(v) => {
                session
                    .set_hidden(v.kind, &v.key, v.hidden, clock.now_ms())
                    .map_err(|source| ReplayError::Action { step, source })?;
            }
        }
    }
    let metrics = session.export_metrics();
    Ok(ReplayOutcome {
        session,
        turns,
        metrics,
    })
}

//! Persona identities: profile extraction, the per-session registry, and the
//! population bounds a completion must respect.

use crate::annotation::{normalize_keyword, ParsedUtterance, SpanKind};
use crate::ids::{AgentId, MessageId};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FIRST_TURN_MIN_NEW: usize = 3;
pub const FIRST_TURN_MAX_NEW: usize = 6;
pub const LATER_TURN_MAX_NEW: usize = 3;
pub const LATER_TURN_MIN_SPEAKERS: usize = 2;
pub const LATER_TURN_MAX_SPEAKERS: usize = 4;
/// Intros are asked to share this many criteria; fewer is only an advisory.
pub const INTRO_EXPECTED_CRITERIA: usize = 3;

const RESERVED_NAME: &str = "user";

const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f", "#bab0ac",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent_id: AgentId,
    pub name: String,
    pub descriptor: String,
    pub valued_criteria: Vec<String>,
    pub chosen_option: String,
    pub source_url: Option<String>,
    pub created_turn: u32,
    pub intro_message_id: MessageId,
}

impl AgentProfile {
    pub fn values(&self, criterion_key: &str) -> bool {
        self.valued_criteria.iter().any(|c| c == criterion_key)
    }

    /// Stable display color derived from the agent's name.
    pub fn color(&self) -> &'static str {
        palette_color(&self.name)
    }
}

/// FNV-1a over the normalized name; stable across processes and releases.
pub fn palette_color(name: &str) -> &'static str {
    let key = normalize_keyword(name).unwrap_or_default();
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in key.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    PALETTE[(hash % PALETTE.len() as u64) as usize]
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProfileError {
    #[error("introduction by {0} names no option")]
    MissingOption(String),
    #[error("introduction by {0} names no criteria")]
    MissingCriteria(String),
}

/// A freshly extracted profile and whether it fell short of the expected
/// number of valued criteria.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedProfile {
    pub profile: AgentProfile,
    pub under_three_criteria: bool,
}

/// Builds a profile from the first utterance a persona ever speaks.
pub fn extract_profile(
    intro: &ParsedUtterance,
    turn: u32,
    agent_id: AgentId,
    intro_message_id: MessageId,
) -> Result<ExtractedProfile, ProfileError> {
    let valued_criteria: Vec<String> = intro
        .keys_of(SpanKind::Criterion)
        .into_iter()
        .map(str::to_string)
        .collect();
    let chosen_option = intro
        .spans_of(SpanKind::Option)
        .next()
        .map(|s| s.canonical_key.clone())
        .ok_or_else(|| ProfileError::MissingOption(intro.speaker_name.clone()))?;
    if valued_criteria.is_empty() {
        return Err(ProfileError::MissingCriteria(intro.speaker_name.clone()));
    }
    let under_three_criteria = valued_criteria.len() < INTRO_EXPECTED_CRITERIA;
    Ok(ExtractedProfile {
        profile: AgentProfile {
            agent_id,
            name: intro.speaker_name.clone(),
            descriptor: intro.plain_text.clone(),
            valued_criteria,
            chosen_option,
            source_url: None,
            created_turn: turn,
            intro_message_id,
        },
        under_three_criteria,
    })
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("an agent named {0:?} already exists")]
    DuplicateName(String),
    #[error("{0:?} is a reserved name")]
    ReservedName(String),
    #[error("agent id {0} is already registered")]
    DuplicateId(AgentId),
}

/// Agents in spawn order, with a lookup by normalized name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRegistry {
    agents: IndexMap<AgentId, AgentProfile>,
    name_index: IndexMap<String, AgentId>,
}

impl AgentRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn get(&self, id: &AgentId) -> Option<&AgentProfile> {
        self.agents.get(id)
    }

    pub fn get_mut(&mut self, id: &AgentId) -> Option<&mut AgentProfile> {
        self.agents.get_mut(id)
    }

    pub fn contains(&self, id: &AgentId) -> bool {
        self.agents.contains_key(id)
    }

    pub fn by_name(&self, name: &str) -> Option<&AgentProfile> {
        let key = normalize_keyword(name).ok()?;
        self.name_index.get(&key).and_then(|id| self.agents.get(id))
    }

    pub fn id_for_name(&self, name: &str) -> Option<&AgentId> {
        let key = normalize_keyword(name).ok()?;
        self.name_index.get(&key)
    }

    /// Agents in spawn order.
    pub fn iter(&self) -> impl Iterator<Item = &AgentProfile> {
        self.agents.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut AgentProfile> {
        self.agents.values_mut()
    }

    /// Inserts every profile or none of them.
    pub fn register_agents(&mut self, profiles: Vec<AgentProfile>) -> Result<(), RegistryError> {
        let mut batch_names: Vec<String> = Vec::with_capacity(profiles.len());
        let mut batch_ids: Vec<&AgentId> = Vec::with_capacity(profiles.len());
        for profile in &profiles {
            let key = normalize_keyword(&profile.name)
                .map_err(|_| RegistryError::ReservedName(profile.name.clone()))?;
            if key == RESERVED_NAME {
                return Err(RegistryError::ReservedName(profile.name.clone()));
            }
            if self.name_index.contains_key(&key) || batch_names.contains(&key) {
                return Err(RegistryError::DuplicateName(profile.name.clone()));
            }
            if self.agents.contains_key(&profile.agent_id) || batch_ids.contains(&&profile.agent_id) {
                return Err(RegistryError::DuplicateId(profile.agent_id.clone()));
            }
            batch_names.push(key);
            batch_ids.push(&profile.agent_id);
        }
        for (profile, key) in profiles.into_iter().zip(batch_names) {
            self.name_index.insert(key, profile.agent_id.clone());
            self.agents.insert(profile.agent_id.clone(), profile);
        }
        Ok(())
    }

    pub fn agents_by_criterion(&self, key: &str) -> Vec<AgentId> {
        self.iter()
            .filter(|a| a.values(key))
            .map(|a| a.agent_id.clone())
            .collect()
    }

    pub fn agents_by_option(&self, key: &str) -> Vec<AgentId> {
        self.iter()
            .filter(|a| a.chosen_option == key)
            .map(|a| a.agent_id.clone())
            .collect()
    }

    /// Checks the name index against the agent map, e.g. after loading.
    pub fn is_consistent(&self) -> bool {
        self.agents.len() == self.name_index.len()
            && self.agents.iter().all(|(id, profile)| {
                profile.agent_id == *id
                    && normalize_keyword(&profile.name)
                        .ok()
                        .and_then(|k| self.name_index.get(&k))
                        == Some(id)
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnViolation {
    TooFewFirstTurn,
    TooManyFirstTurn,
    TooManyNew,
    TooFewSpeakers,
    TooManySpeakers,
    IntroMissingOption,
    IntroMissingCriteria,
    IntroUnderThreeCriteria,
}

impl TurnViolation {
    /// Violations that make the engine discard the completion and retry.
    pub fn rejects_completion(self) -> bool {
        matches!(
            self,
            TurnViolation::TooFewFirstTurn
                | TurnViolation::TooManyFirstTurn
                | TurnViolation::TooManyNew
                | TurnViolation::IntroMissingOption
                | TurnViolation::IntroMissingCriteria
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnConstraintReport {
    pub is_first_turn: bool,
    pub new_agent_count: usize,
    pub speaker_count: usize,
    pub violations: Vec<TurnViolation>,
}

impl TurnConstraintReport {
    pub fn is_rejecting(&self) -> bool {
        self.violations.iter().any(|v| v.rejects_completion())
    }

    pub fn rejection_reasons(&self) -> Vec<TurnViolation> {
        self.violations
            .iter()
            .copied()
            .filter(|v| v.rejects_completion())
            .collect()
    }
}

/// The user's routing for the turn being validated.
#[derive(Debug, Clone, Copy, Default)]
pub struct TurnContext<'a> {
    pub is_first_turn: bool,
    pub tagged: &'a [AgentId],
}

/// Checks one completion's speakers against the population bounds.
pub fn validate_turn(
    registry_before: &AgentRegistry,
    parsed_turn: &[ParsedUtterance],
    ctx: TurnContext<'_>,
) -> TurnConstraintReport {
    // distinct speakers, first utterance each
    let mut speakers: IndexMap<String, &ParsedUtterance> = IndexMap::new();
    for u in parsed_turn {
        let key = normalize_keyword(&u.speaker_name).unwrap_or_default();
        speakers.entry(key).or_insert(u);
    }
    let new_speakers: Vec<&ParsedUtterance> = speakers
        .iter()
        .filter(|(key, _)| registry_before.id_for_name(key).is_none())
        .map(|(_, u)| *u)
        .collect();
    let new_agent_count = new_speakers.len();
    let speaker_count = speakers.len();
    let mut violations = Vec::new();

    if ctx.is_first_turn {
        if new_agent_count < FIRST_TURN_MIN_NEW {
            violations.push(TurnViolation::TooFewFirstTurn);
        }
        if new_agent_count > FIRST_TURN_MAX_NEW {
            violations.push(TurnViolation::TooManyFirstTurn);
        }
    } else {
        if new_agent_count > LATER_TURN_MAX_NEW {
            violations.push(TurnViolation::TooManyNew);
        }
        if speaker_count < LATER_TURN_MIN_SPEAKERS && !directly_addressed(registry_before, &speakers, ctx.tagged) {
            violations.push(TurnViolation::TooFewSpeakers);
        }
        if speaker_count > LATER_TURN_MAX_SPEAKERS {
            violations.push(TurnViolation::TooManySpeakers);
        }
    }

    for intro in new_speakers {
        let has_option = intro.spans_of(SpanKind::Option).next().is_some();
        let criteria = intro.keys_of(SpanKind::Criterion).len();
        if !has_option {
            push_once(&mut violations, TurnViolation::IntroMissingOption);
        }
        if criteria == 0 {
            push_once(&mut violations, TurnViolation::IntroMissingCriteria);
        } else if criteria < INTRO_EXPECTED_CRITERIA {
            push_once(&mut violations, TurnViolation::IntroUnderThreeCriteria);
        }
    }

    TurnConstraintReport {
        is_first_turn: ctx.is_first_turn,
        new_agent_count,
        speaker_count,
        violations,
    }
}

/// A lone speaker is fine when the user tagged exactly that agent.
fn directly_addressed(
    registry: &AgentRegistry,
    speakers: &IndexMap<String, &ParsedUtterance>,
    tagged: &[AgentId],
) -> bool {
    if tagged.len() != 1 || speakers.len() != 1 {
        return false;
    }
    let (name, _) = speakers.first().expect("one speaker");
    registry.id_for_name(name) == Some(&tagged[0])
}

fn push_once(violations: &mut Vec<TurnViolation>, v: TurnViolation) {
    if !violations.contains(&v) {
        violations.push(v);
    }
}

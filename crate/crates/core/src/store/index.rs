//! Running registry of every criterion and option mentioned in the
//! conversation, with mention counts, speakers, and co-occurrence links.

use super::StoreError;
use crate::agents::AgentRegistry;
use crate::annotation::{normalize_keyword, ParsedUtterance, SpanKind};
use crate::ids::AgentId;
use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeywordKind {
    Criterion,
    Option,
}

impl KeywordKind {
    pub fn from_span(kind: SpanKind) -> Option<Self> {
        match kind {
            SpanKind::Criterion => Some(KeywordKind::Criterion),
            SpanKind::Option => Some(KeywordKind::Option),
            SpanKind::AgentMention => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeywordRef {
    pub kind: KeywordKind,
    pub key: String,
}

impl KeywordRef {
    pub fn new(kind: KeywordKind, key: impl Into<String>) -> Self {
        Self {
            kind,
            key: key.into(),
        }
    }

    pub fn criterion(key: impl Into<String>) -> Self {
        Self::new(KeywordKind::Criterion, key)
    }

    pub fn option(key: impl Into<String>) -> Self {
        Self::new(KeywordKind::Option, key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub kind: KeywordKind,
    /// First-seen display form.
    pub display: String,
    /// Number of committed persona utterances that mention the key.
    pub count: u32,
    pub mentioning_agents: IndexSet<AgentId>,
    pub co_keys: IndexSet<KeywordRef>,
    pub hidden: bool,
    pub pinned: bool,
    pub source_url: Option<String>,
}

impl IndexEntry {
    fn new(kind: KeywordKind, display: &str) -> Self {
        Self {
            kind,
            display: display.to_string(),
            count: 0,
            mentioning_agents: IndexSet::new(),
            co_keys: IndexSet::new(),
            hidden: false,
            pinned: false,
            source_url: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryIndex {
    criteria: IndexMap<String, IndexEntry>,
    options: IndexMap<String, IndexEntry>,
}

/// Linked agents and keywords for one keyword, strongest links first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Associations {
    pub agents: Vec<AgentId>,
    pub related_keys: Vec<KeywordRef>,
}

impl HistoryIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self, kind: KeywordKind) -> &IndexMap<String, IndexEntry> {
        match kind {
            KeywordKind::Criterion => &self.criteria,
            KeywordKind::Option => &self.options,
        }
    }

    fn entries_mut(&mut self, kind: KeywordKind) -> &mut IndexMap<String, IndexEntry> {
        match kind {
            KeywordKind::Criterion => &mut self.criteria,
            KeywordKind::Option => &mut self.options,
        }
    }

    pub fn get(&self, r: &KeywordRef) -> Option<&IndexEntry> {
        self.entries(r.kind).get(&r.key)
    }

    pub fn get_mut(&mut self, r: &KeywordRef) -> Option<&mut IndexEntry> {
        self.entries_mut(r.kind).get_mut(&r.key)
    }

    pub fn contains(&self, r: &KeywordRef) -> bool {
        self.get(r).is_some()
    }

    pub fn is_empty(&self) -> bool {
        self.criteria.is_empty() && self.options.is_empty()
    }

    /// All entries, criteria first, each in first-seen order.
    pub fn iter(&self) -> impl Iterator<Item = (KeywordRef, &IndexEntry)> {
        self.criteria
            .iter()
            .map(|(k, e)| (KeywordRef::criterion(k.clone()), e))
            .chain(
                self.options
                    .iter()
                    .map(|(k, e)| (KeywordRef::option(k.clone()), e)),
            )
    }

    /// Entries that should appear in a presentation list.
    pub fn visible(&self, kind: KeywordKind) -> impl Iterator<Item = (&String, &IndexEntry)> {
        self.entries(kind).iter().filter(|(_, e)| !e.hidden)
    }

    /// Looks a key up by display text or canonical key; `kind = None`
    /// matches either kind.
    pub fn resolve(&self, kind: Option<KeywordKind>, key: &str) -> Vec<KeywordRef> {
        let Ok(key) = normalize_keyword(key) else {
            return Vec::new();
        };
        [KeywordKind::Criterion, KeywordKind::Option]
            .into_iter()
            .filter(|k| kind.is_none_or(|want| want == *k))
            .map(|k| KeywordRef::new(k, key.clone()))
            .filter(|r| self.contains(r))
            .collect()
    }

    /// Folds an accepted turn into the index. Returns the keywords touched,
    /// in first-touch order.
    pub fn update_index(
        &mut self,
        turn_utterances: &[ParsedUtterance],
        registry: &AgentRegistry,
    ) -> Vec<KeywordRef> {
        let mut touched: IndexSet<KeywordRef> = IndexSet::new();
        for u in turn_utterances {
            let speaker = registry.id_for_name(&u.speaker_name).cloned();
            // distinct keywords of this utterance, each with its first display form
            let mut keys: IndexMap<KeywordRef, &str> = IndexMap::new();
            for span in &u.spans {
                if let Some(kind) = KeywordKind::from_span(span.kind) {
                    keys.entry(KeywordRef::new(kind, span.canonical_key.clone()))
                        .or_insert(span.display_text.as_str());
                }
            }
            for (r, display) in &keys {
                let entry = self
                    .entries_mut(r.kind)
                    .entry(r.key.clone())
                    .or_insert_with(|| IndexEntry::new(r.kind, display));
                entry.count += 1;
                if let Some(id) = &speaker {
                    entry.mentioning_agents.insert(id.clone());
                }
                for other in keys.keys() {
                    if other != r {
                        entry.co_keys.insert(other.clone());
                    }
                }
                touched.insert(r.clone());
            }
        }
        touched.into_iter().collect()
    }

    pub fn set_hidden(&mut self, r: &KeywordRef, hidden: bool) -> Result<(), StoreError> {
        let entry = self
            .get_mut(r)
            .ok_or_else(|| StoreError::UnknownKey(r.key.clone()))?;
        entry.hidden = hidden;
        Ok(())
    }

    pub(crate) fn set_pinned(&mut self, r: &KeywordRef, pinned: bool) -> Result<(), StoreError> {
        let entry = self
            .get_mut(r)
            .ok_or_else(|| StoreError::UnknownKey(r.key.clone()))?;
        entry.pinned = pinned;
        Ok(())
    }

    /// Agents and keywords linked to `r`, from agent profiles first and
    /// co-occurrence second.
    pub fn associations(
        &self,
        registry: &AgentRegistry,
        r: &KeywordRef,
    ) -> Result<Associations, StoreError> {
        let entry = self
            .get(r)
            .ok_or_else(|| StoreError::UnknownKey(r.key.clone()))?;

        let profile_agents = match r.kind {
            KeywordKind::Criterion => registry.agents_by_criterion(&r.key),
            KeywordKind::Option => registry.agents_by_option(&r.key),
        };
        let mut agents: IndexSet<AgentId> = profile_agents.iter().cloned().collect();
        agents.extend(
            entry
                .mentioning_agents
                .iter()
                .filter(|id| registry.contains(id))
                .cloned(),
        );

        let mut related: IndexSet<KeywordRef> = IndexSet::new();
        for id in &profile_agents {
            let Some(profile) = registry.get(id) else { continue };
            match r.kind {
                KeywordKind::Criterion => {
                    related.insert(KeywordRef::option(profile.chosen_option.clone()));
                }
                KeywordKind::Option => {
                    related.extend(profile.valued_criteria.iter().cloned().map(KeywordRef::criterion));
                }
            }
        }
        related.extend(entry.co_keys.iter().cloned());
        related.retain(|k| k != r && self.contains(k));

        Ok(Associations {
            agents: agents.into_iter().collect(),
            related_keys: related.into_iter().collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentProfile;
    use crate::annotation::parse_completion;
    use crate::ids::MessageId;

    const TENNIS_TURN: &str = include_str!("../../fixtures/tennis_turn.txt");

    fn registry() -> AgentRegistry {
        let mut reg = AgentRegistry::new();
        let mk = |id: &str, name: &str, criteria: &[&str], option: &str| AgentProfile {
            agent_id: AgentId::from(id),
            name: name.into(),
            descriptor: String::new(),
            valued_criteria: criteria.iter().map(|s| s.to_string()).collect(),
            chosen_option: option.into(),
            source_url: None,
            created_turn: 1,
            intro_message_id: MessageId(0),
        };
        reg.register_agents(vec![
            mk("a1", "Steven", &["spin"], "babolat pure aero"),
            mk("a2", "Gina", &["control", "spin", "stiff"], "wilson blade"),
            mk("a3", "Kenneth", &["control", "spin"], "head speed"),
        ])
        .unwrap();
        reg
    }

    #[test]
    fn tennis_counts_per_utterance() {
        let parsed = parse_completion(TENNIS_TURN);
        let mut index = HistoryIndex::new();
        index.update_index(&parsed.utterances, &registry());
        let spin = index.get(&KeywordRef::criterion("spin")).unwrap();
        assert_eq!(spin.count, 3);
        assert_eq!(index.get(&KeywordRef::criterion("control")).unwrap().count, 2);
        assert_eq!(index.get(&KeywordRef::criterion("stiff")).unwrap().count, 1);
        assert_eq!(index.get(&KeywordRef::option("wilson blade")).unwrap().display, "Wilson Blade");
        assert_eq!(spin.mentioning_agents.len(), 3);
    }

    #[test]
    fn empty_turn_leaves_index_unchanged() {
        let mut index = HistoryIndex::new();
        assert!(index.update_index(&[], &registry()).is_empty());
        assert_eq!(index, HistoryIndex::new());
    }

    #[test]
    fn spin_associations() {
        let reg = registry();
        let mut index = HistoryIndex::new();
        index.update_index(&parse_completion(TENNIS_TURN).utterances, &reg);
        let assoc = index.associations(&reg, &KeywordRef::criterion("spin")).unwrap();
        assert_eq!(assoc.agents, ["a1", "a2", "a3"].map(AgentId::from));
        assert!(assoc.related_keys.contains(&KeywordRef::option("babolat pure aero")));
        // head speed is a profile link but never mentioned, so it is not indexed
        assert!(!assoc.related_keys.contains(&KeywordRef::option("head speed")));
        assert!(index.associations(&reg, &KeywordRef::criterion("price")).is_err());
    }

    #[test]
    fn singleton_associations() {
        let reg = AgentRegistry::new();
        let mut index = HistoryIndex::new();
        let parsed = parse_completion("@{Zed}(opinion): only %{weight} here.%%%");
        index.update_index(&parsed.utterances, &reg);
        let assoc = index.associations(&reg, &KeywordRef::criterion("weight")).unwrap();
        assert!(assoc.agents.is_empty());
        assert!(assoc.related_keys.is_empty());
    }

    #[test]
    fn co_keys_are_symmetric() {
        let mut index = HistoryIndex::new();
        index.update_index(&parse_completion(TENNIS_TURN).utterances, &registry());
        let all: Vec<_> = index.iter().map(|(r, _)| r).collect();
        for a in &all {
            for b in &all {
                let ab = index.get(a).unwrap().co_keys.contains(b);
                let ba = index.get(b).unwrap().co_keys.contains(a);
                assert_eq!(ab, ba, "{a:?} / {b:?}");
            }
        }
    }

    #[test]
    fn hiding_keeps_counts() {
        let mut index = HistoryIndex::new();
        index.update_index(&parse_completion(TENNIS_TURN).utterances, &registry());
        let stiff = KeywordRef::criterion("stiff");
        index.set_hidden(&stiff, true).unwrap();
        assert_eq!(index.get(&stiff).unwrap().count, 1);
        assert!(index.visible(KeywordKind::Criterion).all(|(k, _)| k != "stiff"));
        index.set_pinned(&stiff, true).unwrap();
        assert!(index.get(&stiff).unwrap().hidden && index.get(&stiff).unwrap().pinned);
        assert!(index.set_hidden(&KeywordRef::criterion("nope"), true).is_err());
    }

    #[test]
    fn resolve_normalizes() {
        let mut index = HistoryIndex::new();
        index.update_index(&parse_completion(TENNIS_TURN).utterances, &registry());
        assert_eq!(index.resolve(None, "  Wilson   BLADE"), [KeywordRef::option("wilson blade")]);
        assert!(index.resolve(Some(KeywordKind::Criterion), "wilson blade").is_empty());
    }
}

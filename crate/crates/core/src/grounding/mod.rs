//! Web grounding for newly introduced options: search, fetch the top
//! results, extract their main text, and keep a bounded excerpt that is
//! injected into the conversation stream as context.

mod extract;
mod fixture;
mod http;

pub use extract::{extract_main_text, extract_title, DensityExtractor, ExtractedPage, Extractor};
pub use fixture::{FixtureFetcher, FixturePage, FixtureSearch, GroundingFixture};
pub use http::{HttpFetcher, HttpSearch, DEFAULT_SEARCH_ENDPOINT};

use crate::clock::Clock;
use crate::ids::MessageId;
use crate::store::{KeywordRef, Message, MessageKind, Session, StoreError};
use serde_json::json;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

/// Result pages fetched per option.
pub const TOP_K: usize = 3;
pub const DEFAULT_BUDGET_CHARS: usize = 4000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroundingError {
    #[error("search failed: {0}")]
    Search(String),
    #[error("fetch of {url} failed: {reason}")]
    Fetch { url: String, reason: String },
    #[error("fetch of {0} timed out")]
    Timeout(String),
}

pub trait SearchProvider: Send + Sync {
    /// Ordered result URLs, at most `k`.
    fn search(&self, query: &str, k: usize) -> Result<Vec<String>, GroundingError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchedPage {
    pub status: u16,
    pub body: String,
}

pub trait Fetcher: Send + Sync {
    fn fetch(&self, url: &str) -> Result<FetchedPage, GroundingError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchStatus {
    Ok,
    FetchFailed,
    ExtractEmpty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDoc {
    pub url: String,
    pub title: String,
    pub extracted_text: String,
    pub fetched_at: u64,
    pub fetch_status: FetchStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingBundle {
    pub option_key: String,
    pub display_name: String,
    pub docs: Vec<SourceDoc>,
    /// The full injected context message; empty when nothing was fetched.
    pub context: String,
    pub context_message_id: Option<MessageId>,
    pub primary_url: Option<String>,
}

impl GroundingBundle {
    pub fn ok_docs(&self) -> impl Iterator<Item = &SourceDoc> {
        self.docs.iter().filter(|d| d.fetch_status == FetchStatus::Ok)
    }

    pub fn is_empty(&self) -> bool {
        self.context.is_empty()
    }
}

/// Longest prefix of `text` that has at most `max_chars` characters and
/// ends at a whitespace boundary (or at the end of `text`).
pub fn truncate_at_whitespace(text: &str, max_chars: usize) -> &str {
    let Some((cut, _)) = text.char_indices().nth(max_chars) else {
        return text;
    };
    let head = &text[..cut];
    if text[cut..].starts_with(char::is_whitespace) {
        return head.trim_end();
    }
    match head.rfind(char::is_whitespace) {
        Some(ws) => head[..ws].trim_end(),
        None => "",
    }
}

/// Header line of a context message; the excerpt follows on the next line.
pub fn context_header(display_name: &str, urls: &[&str]) -> String {
    format!(
        "Information gathered from the web about {display_name}. Use it as context when discussing {display_name}. Sources: {}\n\n",
        urls.join(" ")
    )
}

/// Search, fetch, and extract pipeline for one option.
#[derive(Clone)]
pub struct Grounder {
    search: Arc<dyn SearchProvider>,
    fetcher: Arc<dyn Fetcher>,
    extractor: Arc<dyn Extractor>,
    budget_chars: usize,
}

impl Grounder {
    pub fn new(search: Arc<dyn SearchProvider>, fetcher: Arc<dyn Fetcher>) -> Self {
        Self {
            search,
            fetcher,
            extractor: Arc::new(DensityExtractor),
            budget_chars: DEFAULT_BUDGET_CHARS,
        }
    }

    pub fn with_extractor(mut self, extractor: Arc<dyn Extractor>) -> Self {
        self.extractor = extractor;
        self
    }

    pub fn with_budget(mut self, budget_chars: usize) -> Self {
        self.budget_chars = budget_chars;
        self
    }

    pub fn budget_chars(&self) -> usize {
        self.budget_chars
    }

    /// Never fails: search and fetch problems shrink the bundle instead.
    pub fn ground_option(&self, option_key: &str, display_name: &str, clock: &dyn Clock) -> GroundingBundle {
        let urls = match self.search.search(display_name, TOP_K) {
            Ok(urls) => urls,
            Err(err) => {
                tracing::warn!(option = option_key, %err, "search failed");
                Vec::new()
            }
        };
        let docs: Vec<SourceDoc> = urls
            .into_iter()
            .take(TOP_K)
            .map(|url| self.fetch_doc(url, clock))
            .collect();
        self.assemble(option_key, display_name, docs)
    }

    fn fetch_doc(&self, url: String, clock: &dyn Clock) -> SourceDoc {
        let fetched_at = clock.now_ms();
        let failed = |url: String| SourceDoc {
            url,
            title: String::new(),
            extracted_text: String::new(),
            fetched_at,
            fetch_status: FetchStatus::FetchFailed,
        };
        match self.fetcher.fetch(&url) {
            Ok(page) if (200..300).contains(&page.status) => {
                let extracted = self.extractor.extract(&page.body);
                let fetch_status = if extracted.text.is_empty() {
                    FetchStatus::ExtractEmpty
                } else {
                    FetchStatus::Ok
                };
                SourceDoc {
                    url,
                    title: extracted.title,
                    extracted_text: extracted.text,
                    fetched_at,
                    fetch_status,
                }
            }
            Ok(page) => {
                tracing::warn!(%url, status = page.status, "fetch returned an error status");
                failed(url)
            }
            Err(err) => {
                tracing::warn!(%url, %err, "fetch failed");
                failed(url)
            }
        }
    }

    fn assemble(&self, option_key: &str, display_name: &str, docs: Vec<SourceDoc>) -> GroundingBundle {
        let ok: Vec<&SourceDoc> = docs
            .iter()
            .filter(|d| d.fetch_status == FetchStatus::Ok)
            .collect();
        let primary_url = ok.first().map(|d| d.url.clone());
        let context = if ok.is_empty() {
            String::new()
        } else {
            let urls: Vec<&str> = ok.iter().map(|d| d.url.as_str()).collect();
            let header = context_header(display_name, &urls);
            let joined = ok
                .iter()
                .map(|d| d.extracted_text.as_str())
                .collect::<Vec<_>>()
                .join("\n\n");
            let room = self.budget_chars.saturating_sub(header.chars().count());
            let excerpt = truncate_at_whitespace(&joined, room);
            if excerpt.is_empty() {
                String::new()
            } else {
                format!("{header}{excerpt}")
            }
        };
        GroundingBundle {
            option_key: option_key.to_string(),
            display_name: display_name.to_string(),
            docs,
            context,
            context_message_id: None,
            primary_url,
        }
    }
}

/// Caches `bundle` on the session and, when it carries text, appends it as
/// a non-display context message. Sets the option's hyperlink on the index
/// entry and on every agent that chose it.
pub fn inject_grounding(session: &mut Session, mut bundle: GroundingBundle, ts: u64) -> Result<Option<MessageId>, StoreError> {
    let r = KeywordRef::option(bundle.option_key.clone());
    if !session.index.contains(&r) {
        return Err(StoreError::UnknownKey(bundle.option_key));
    }
    let key = bundle.option_key.clone();
    if let Some(existing) = session.grounding.get(&key) {
        return Ok(existing.context_message_id);
    }
    let mut id = None;
    if !bundle.is_empty() {
        let mid = session.allocate_message_id();
        session.messages.push(Message {
            id: mid,
            turn: session.turn_count,
            kind: MessageKind::Context,
            agent_id: None,
            speaker_name: None,
            content: bundle.context.clone(),
            display: false,
            utterance: None,
            pre_prompt: None,
            labels: Vec::new(),
        });
        bundle.context_message_id = Some(mid);
        id = Some(mid);
    }
    if let Some(url) = &bundle.primary_url {
        if let Some(entry) = session.index.get_mut(&r) {
            entry.source_url = Some(url.clone());
        }
        for agent in session.registry.iter_mut() {
            if agent.chosen_option == key {
                agent.source_url = Some(url.clone());
            }
        }
    }
    let statuses: Vec<_> = bundle.docs.iter().map(|d| (d.url.as_str(), d.fetch_status)).collect();
    let payload = json!({"option": key, "message_id": id, "primary_url": bundle.primary_url, "docs": statuses});
    session.log_event(ts, "grounding", payload);
    session.grounding.insert(key, bundle);
    Ok(id)
}

impl std::fmt::Debug for Grounder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grounder")
            .field("budget_chars", &self.budget_chars)
            .finish_non_exhaustive()
    }
}

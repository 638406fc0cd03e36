//! Chat completion backends: an ordered role/content list in, one
//! completion text out.

use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: ChatRole, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatProviderRequest {
    pub messages: Vec<ChatMessage>,
    pub model_hint: String,
    pub max_retries_remaining: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("provider transport failure: {0}")]
    Transport(String),
    #[error("scripted provider has no completion for request {0}")]
    Exhausted(usize),
    #[error("provider returned an unexpected response: {0}")]
    BadResponse(String),
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatProviderRequest) -> Result<String, ProviderError>;
}

/// Fixture file layout: `{"completions": ["...", "..."]}`; entry `n` answers
/// the `n`-th request this provider receives. Other keys are ignored. A
/// replay fixture (`{"steps": [{"completions": [...]}, ...]}`) is accepted
/// too and flattened in step order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScriptedFixture {
    pub completions: Vec<String>,
}

/// Replays canned completions by request ordinal and records every request.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    completions: Vec<String>,
    next: AtomicUsize,
    requests: Mutex<Vec<ChatProviderRequest>>,
}

impl ScriptedProvider {
    pub fn new<I, S>(completions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            completions: completions.into_iter().map(Into::into).collect(),
            next: AtomicUsize::new(0),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let invalid = |e: serde_json::Error| std::io::Error::new(std::io::ErrorKind::InvalidData, e);
        let value: serde_json::Value = serde_json::from_str(&text).map_err(invalid)?;
        if value.get("completions").is_none() {
            if let Some(steps) = value.get("steps").and_then(|s| s.as_array()) {
                let mut completions = Vec::new();
                for step in steps {
                    if let Some(list) = step.get("completions") {
                        completions.extend(Vec::<String>::deserialize(list).map_err(invalid)?);
                    }
                }
                return Ok(Self::new(completions));
            }
        }
        let fixture = ScriptedFixture::deserialize(value).map_err(invalid)?;
        Ok(Self::new(fixture.completions))
    }

    /// Requests served so far, in order.
    pub fn requests(&self) -> Vec<ChatProviderRequest> {
        self.requests.lock().expect("requests lock").clone()
    }

    pub fn served(&self) -> usize {
        self.next.load(Ordering::SeqCst)
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, request: &ChatProviderRequest) -> Result<String, ProviderError> {
        let ordinal = self.next.fetch_add(1, Ordering::SeqCst);
        self.requests
            .lock()
            .expect("requests lock")
            .push(request.clone());
        self.completions
            .get(ordinal)
            .cloned()
            .ok_or(ProviderError::Exhausted(ordinal))
    }
}

pub const DEFAULT_OPENAI_BASE: &str = "https://api.openai.com/v1";

/// OpenAI-compatible `/chat/completions` client.
#[derive(Debug, Clone)]
pub struct OpenAiProvider {
    agent: ureq::Agent,
    base_url: String,
    api_key: String,
    model: String,
}

impl OpenAiProvider {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, model: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            agent,
            base_url: base_url.into(),
            api_key: api_key.into(),
            model: model.into(),
        }
    }
}

impl ChatProvider for OpenAiProvider {
    fn complete(&self, request: &ChatProviderRequest) -> Result<String, ProviderError> {
        let model = if request.model_hint.is_empty() {
            &self.model
        } else {
            &request.model_hint
        };
        let body = serde_json::json!({
            "model": model,
            "messages": request.messages,
        });
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let response: serde_json::Value = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| ProviderError::Transport(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        response["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::BadResponse("no choices[0].message.content".into()))
    }
}

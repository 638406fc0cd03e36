//! `config.toml` for the service. Credentials come from environment
//! variables named in the file, never from the file itself.

use crate::clock::SystemClock;
use crate::engine::Engine;
use crate::grounding::{Grounder, GroundingFixture, HttpFetcher, HttpSearch, DEFAULT_SEARCH_ENDPOINT};
use crate::prompts::{PromptCatalog, PromptError};
use crate::provider::{ChatProvider, OpenAiProvider, ScriptedProvider, DEFAULT_OPENAI_BASE};
use crate::store::SessionConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
    #[error("missing credential: environment variable {0} is not set")]
    MissingCredential(String),
    #[error(transparent)]
    Prompts(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    #[default]
    Scripted,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingMode {
    #[default]
    Off,
    Fixture,
    Live,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub mode: ProviderMode,
    pub fixture: Option<PathBuf>,
    pub model: String,
    pub base_url: String,
    pub api_key_env: String,
}

impl Default for ProviderSection {
    fn default() -> Self {
        Self {
            mode: ProviderMode::Scripted,
            fixture: None,
            model: "gpt-4-0613".into(),
            base_url: DEFAULT_OPENAI_BASE.into(),
            api_key_env: "OPENAI_API_KEY".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundingSection {
    pub mode: GroundingMode,
    pub fixture: Option<PathBuf>,
    pub budget_chars: usize,
    pub search_endpoint: String,
    pub search_key_env: String,
    pub search_engine_env: String,
    pub fetch_timeout_secs: u64,
}

impl Default for GroundingSection {
    fn default() -> Self {
        Self {
            mode: GroundingMode::Off,
            fixture: None,
            budget_chars: crate::grounding::DEFAULT_BUDGET_CHARS,
            search_endpoint: DEFAULT_SEARCH_ENDPOINT.into(),
            search_key_env: "SEARCH_API_KEY".into(),
            search_engine_env: "SEARCH_ENGINE_ID".into(),
            fetch_timeout_secs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub max_retries: u32,
    pub domain_hint: Option<String>,
    pub prompts_dir: Option<PathBuf>,
}

impl Default for EngineSection {
    fn default() -> Self {
        Self {
            max_retries: 2,
            domain_hint: None,
            prompts_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    pub data_dir: PathBuf,
    pub provider: ProviderSection,
    pub grounding: GroundingSection,
    pub engine: EngineSection,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            data_dir: PathBuf::from("data"),
            provider: ProviderSection::default(),
            grounding: GroundingSection::default(),
            engine: EngineSection::default(),
        }
    }
}

impl ServiceConfig {
    /// Reads `path`; relative paths inside are resolved against its directory.
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_relative(base);
        }
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        if let Some(p) = self.provider.fixture.as_mut() {
            fix(p);
        }
        if let Some(p) = self.grounding.fixture.as_mut() {
            fix(p);
        }
        if let Some(p) = self.engine.prompts_dir.as_mut() {
            fix(p);
        }
    }

    /// Defaults applied to every session created by the service.
    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            domain_hint: self.engine.domain_hint.clone(),
            model_hint: self.provider.model.clone(),
            max_retries: self.engine.max_retries,
            grounding_budget: self.grounding.budget_chars,
        }
    }

    /// Checks fixtures and credentials; `env` looks up environment variables.
    pub fn validate(&self, env: &dyn Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let credential = |name: &str| {
            env(name)
                .filter(|v| !v.trim().is_empty())
                .ok_or_else(|| ConfigError::MissingCredential(name.to_string()))
        };
        let readable = |what: &str, p: &Option<PathBuf>| match p {
            Some(p) if p.is_file() => Ok(()),
            Some(p) => Err(ConfigError::Invalid(format!("{what} fixture {} is not readable", p.display()))),
            None => Err(ConfigError::Invalid(format!("{what} fixture mode needs a fixture path"))),
        };
        match self.provider.mode {
            ProviderMode::Scripted => readable("provider", &self.provider.fixture)?,
            ProviderMode::Live => {
                credential(&self.provider.api_key_env)?;
            }
        }
        match self.grounding.mode {
            GroundingMode::Off => {}
            GroundingMode::Fixture => readable("grounding", &self.grounding.fixture)?,
            GroundingMode::Live => {
                credential(&self.grounding.search_key_env)?;
                credential(&self.grounding.search_engine_env)?;
            }
        }
        if self.grounding.budget_chars == 0 {
            return Err(ConfigError::Invalid("grounding.budget_chars must be positive".into()));
        }
        Ok(())
    }

    /// Validates, then builds the engine the service will run.
    pub fn build_engine(&self, env: &dyn Fn(&str) -> Option<String>) -> Result<Engine, ConfigError> {
        self.validate(env)?;
        let catalog = match &self.engine.prompts_dir {
            Some(dir) => PromptCatalog::from_dir(dir)?,
            None => PromptCatalog::builtin(),
        };
        let provider: Arc<dyn ChatProvider> = match self.provider.mode {
            ProviderMode::Scripted => {
                let path = self.provider.fixture.as_deref().expect("validated");
                Arc::new(ScriptedProvider::from_path(path).map_err(|e| ConfigError::Invalid(e.to_string()))?)
            }
            ProviderMode::Live => Arc::new(OpenAiProvider::new(
                &self.provider.base_url,
                env(&self.provider.api_key_env).expect("validated"),
                &self.provider.model,
            )),
        };
        let mut engine = Engine::new(catalog, provider, Arc::new(SystemClock));
        match self.grounding.mode {
            GroundingMode::Off => {}
            GroundingMode::Fixture => {
                let path = self.grounding.fixture.as_deref().expect("validated");
                let fixture = GroundingFixture::from_path(path).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                let (search, fetcher) = fixture.into_providers();
                engine = engine.with_grounder(Grounder::new(Arc::new(search), Arc::new(fetcher)));
            }
            GroundingMode::Live => {
                let search = HttpSearch::new(
                    &self.grounding.search_endpoint,
                    env(&self.grounding.search_key_env).expect("validated"),
                    env(&self.grounding.search_engine_env).expect("validated"),
                );
                let fetcher = HttpFetcher::new(std::time::Duration::from_secs(self.grounding.fetch_timeout_secs));
                engine = engine.with_grounder(Grounder::new(Arc::new(search), Arc::new(fetcher)));
            }
        }
        Ok(engine)
    }
}

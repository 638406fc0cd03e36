//! Offline search and fetch backends driven by a fixture document.

use super::{FetchedPage, Fetcher, GroundingError, SearchProvider};
use crate::annotation::normalize_keyword;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixturePage {
    #[serde(default = "ok_status")]
    pub status: u16,
    #[serde(default)]
    pub html: String,
    /// Simulates a fetch that never completes.
    #[serde(default)]
    pub timeout: bool,
}

fn ok_status() -> u16 {
    200
}

impl FixturePage {
    pub fn html(html: String) -> Self {
        Self {
            status: 200,
            html,
            timeout: false,
        }
    }

    pub fn timeout() -> Self {
        Self {
            status: 0,
            html: String::new(),
            timeout: true,
        }
    }
}

/// `search` maps a query to its ordered result URLs; `pages` maps URLs to
/// canned responses.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingFixture {
    #[serde(default)]
    pub search: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub pages: BTreeMap<String, FixturePage>,
}

impl GroundingFixture {
    /// Reads a fixture file, or the `grounding` block of a replay fixture.
    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let invalid = |e| std::io::Error::new(std::io::ErrorKind::InvalidData, e);
        let mut value: serde_json::Value = serde_json::from_str(&text).map_err(invalid)?;
        if let Some(inner) = value.get_mut("grounding").map(serde_json::Value::take) {
            value = inner;
        }
        serde_json::from_value(value).map_err(invalid)
    }

    pub fn into_providers(self) -> (FixtureSearch, FixtureFetcher) {
        (
            FixtureSearch {
                results: self.search,
            },
            FixtureFetcher { pages: self.pages },
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct FixtureSearch {
    results: BTreeMap<String, Vec<String>>,
}

impl FixtureSearch {
    pub fn new(results: BTreeMap<String, Vec<String>>) -> Self {
        Self { results }
    }
}

impl SearchProvider for FixtureSearch {
    fn search(&self, query: &str, k: usize) -> Result<Vec<String>, GroundingError> {
        let wanted = normalize_keyword(query).ok();
        let hit = self.results.get(query).or_else(|| {
            self.results
                .iter()
                .find(|(q, _)| normalize_keyword(q).ok() == wanted)
                .map(|(_, urls)| urls)
        });
        Ok(hit.map(|urls| urls.iter().take(k).cloned().collect()).unwrap_or_default())
    }
}

#[derive(Debug, Clone, Default)]
pub struct FixtureFetcher {
    pages: BTreeMap<String, FixturePage>,
}

impl FixtureFetcher {
    pub fn new(pages: BTreeMap<String, FixturePage>) -> Self {
        Self { pages }
    }
}

impl Fetcher for FixtureFetcher {
    fn fetch(&self, url: &str) -> Result<FetchedPage, GroundingError> {
        match self.pages.get(url) {
            Some(page) if page.timeout => Err(GroundingError::Timeout(url.to_string())),
            Some(page) => Ok(FetchedPage {
                status: page.status,
                body: page.html.clone(),
            }),
            None => Ok(FetchedPage {
                status: 404,
                body: String::new(),
            }),
        }
    }
}

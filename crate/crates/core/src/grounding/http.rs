//! Live network backends.

use super::{FetchedPage, Fetcher, GroundingError, SearchProvider};
use std::time::Duration;

pub const DEFAULT_SEARCH_ENDPOINT: &str = "https://www.googleapis.com/customsearch/v1";

/// Plain HTTP GET with a global timeout.
#[derive(Debug, Clone)]
pub struct HttpFetcher {
    agent: ureq::Agent,
}

impl HttpFetcher {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Default for HttpFetcher {
    fn default() -> Self {
        Self::new(Duration::from_secs(10))
    }
}

impl Fetcher for HttpFetcher {
    fn fetch(&self, url: &str) -> Result<FetchedPage, GroundingError> {
        let mut response = self.agent.get(url).call().map_err(|e| match e {
            ureq::Error::Timeout(_) => GroundingError::Timeout(url.to_string()),
            other => GroundingError::Fetch {
                url: url.to_string(),
                reason: other.to_string(),
            },
        })?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| GroundingError::Fetch {
                url: url.to_string(),
                reason: e.to_string(),
            })?;
        Ok(FetchedPage { status, body })
    }
}

/// Custom-search style JSON API: `GET endpoint?key=..&cx=..&q=..&num=k`,
/// result URLs read from `items[].link`.
#[derive(Debug, Clone)]
pub struct HttpSearch {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
    engine_id: String,
}

impl HttpSearch {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, engine_id: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(10)))
            .build()
            .into();
        Self {
            agent,
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            engine_id: engine_id.into(),
        }
    }
}

impl SearchProvider for HttpSearch {
    fn search(&self, query: &str, k: usize) -> Result<Vec<String>, GroundingError> {
        let body: serde_json::Value = self
            .agent
            .get(&self.endpoint)
            .query("key", &self.api_key)
            .query("cx", &self.engine_id)
            .query("q", query)
            .query("num", k.to_string())
            .call()
            .map_err(|e| GroundingError::Search(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| GroundingError::Search(e.to_string()))?;
        Ok(body["items"]
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(|item| item["link"].as_str().map(str::to_string))
            .take(k)
            .collect())
    }
}

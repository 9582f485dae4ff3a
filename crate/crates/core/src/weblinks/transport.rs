use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub location: Option<String>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("{0}")]
    Other(String),
}

/// One HTTP exchange without redirect handling; callers follow `location`.
pub trait Transport: Send + Sync {
    fn request(&self, method: Method, url: &str) -> std::result::Result<HttpResponse, TransportError>;
}

/// Recorded exchange, one JSON object per line. Repeated entries for the
/// same request are replayed in order; the last one repeats.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub method: Method,
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub body: String,
    /// `timeout` or `connect`; a set error replaces the response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Default)]
pub struct FixtureTransport {
    entries: HashMap<(Method, String), Vec<FixtureEntry>>,
    cursor: Mutex<HashMap<(Method, String), usize>>,
    log: Mutex<Vec<(Method, String)>>,
}

impl FixtureTransport {
    pub fn new<I: IntoIterator<Item = FixtureEntry>>(entries: I) -> Self {
        let mut map: HashMap<(Method, String), Vec<FixtureEntry>> = HashMap::new();
        for e in entries {
            map.entry((e.method, e.url.clone())).or_default().push(e);
        }
        FixtureTransport { entries: map, ..Default::default() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = crate::codec::open(path)?;
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: FixtureEntry =
                serde_json::from_str(&line).map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
            entries.push(e);
        }
        Ok(Self::new(entries))
    }

    /// Requests served so far, in order.
    pub fn requests(&self) -> Vec<(Method, String)> {
        self.log.lock().unwrap().clone()
    }
}

impl Transport for FixtureTransport {
    fn request(&self, method: Method, url: &str) -> std::result::Result<HttpResponse, TransportError> {
        let key = (method, url.to_string());
        self.log.lock().unwrap().push(key.clone());
        let Some(list) = self.entries.get(&key) else {
            return Err(TransportError::Connect(format!("no fixture for {method:?} {url}")));
        };
        let idx = {
            let mut cursor = self.cursor.lock().unwrap();
            let c = cursor.entry(key).or_insert(0);
            let idx = (*c).min(list.len() - 1);
            *c += 1;
            idx
        };
        let e = &list[idx];
        match e.error.as_deref() {
            Some("timeout") => return Err(TransportError::Timeout),
            Some(other) => return Err(TransportError::Connect(other.to_string())),
            None => {}
        }
        Ok(HttpResponse { status: e.status.unwrap_or(200), location: e.location.clone(), body: e.body.clone() })
    }
}

/// Live HTTP via ureq with redirects disabled and statuses returned as data.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .max_redirects(0)
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .user_agent(concat!("refgraph/", env!("CARGO_PKG_VERSION")))
            .build();
        UreqTransport { agent: ureq::Agent::new_with_config(config) }
    }
}

impl Transport for UreqTransport {
    fn request(&self, method: Method, url: &str) -> std::result::Result<HttpResponse, TransportError> {
        let result = match method {
            Method::Get => self.agent.get(url).call(),
            Method::Head => self.agent.head(url).call(),
        };
        let mut resp = result.map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => TransportError::Timeout,
            ureq::Error::Io(e) => TransportError::Connect(e.to_string()),
            ureq::Error::HostNotFound => TransportError::Connect("host not found".into()),
            other => TransportError::Other(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let location = resp.headers().get("location").and_then(|v| v.to_str().ok()).map(String::from);
        let body = match method {
            Method::Get => resp.body_mut().read_to_string().unwrap_or_default(),
            Method::Head => String::new(),
        };
        Ok(HttpResponse { status, location, body })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_replays_in_order() {
        let e = |status| FixtureEntry { method: Method::Get, url: "http://a/".into(), status: Some(status), location: None, body: String::new(), error: None };
        let t = FixtureTransport::new([e(503), e(200)]);
        assert_eq!(t.request(Method::Get, "http://a/").unwrap().status, 503);
        assert_eq!(t.request(Method::Get, "http://a/").unwrap().status, 200);
        assert_eq!(t.request(Method::Get, "http://a/").unwrap().status, 200);
        assert!(matches!(t.request(Method::Head, "http://a/"), Err(TransportError::Connect(_))));
        assert_eq!(t.requests().len(), 4);
    }

    #[test]
    fn fixture_line_format() {
        let line = r#"{"method":"HEAD","url":"http://x.org/","error":"timeout"}"#;
        let e: FixtureEntry = serde_json::from_str(line).unwrap();
        let t = FixtureTransport::new([e]);
        assert_eq!(t.request(Method::Head, "http://x.org/"), Err(TransportError::Timeout));
    }
}

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::transport::{Method, Transport, TransportError};

pub const DEFAULT_CDX_ENDPOINT: &str = "https://web.archive.org/cdx/search/cdx";

#[derive(Debug, Clone)]
pub struct CdxConfig {
    pub endpoint: String,
    /// Captures requested per lookup, newest first.
    pub limit: u32,
    pub attempts: u32,
    /// Delay before the first retry; doubles after each failure.
    pub backoff: Duration,
}

impl Default for CdxConfig {
    fn default() -> Self {
        CdxConfig { endpoint: DEFAULT_CDX_ENDPOINT.to_string(), limit: 5, attempts: 3, backoff: Duration::from_millis(500) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "lookup", content = "detail")]
pub enum CdxOutcome {
    /// Status of the most recent capture.
    Captured(u16),
    NoCapture,
    /// The archive could not be asked; says nothing about preservation.
    Failed(String),
}

pub struct CdxClient<'t, T: Transport + ?Sized> {
    transport: &'t T,
    cfg: CdxConfig,
}

impl<'t, T: Transport + ?Sized> CdxClient<'t, T> {
    pub fn new(transport: &'t T, cfg: CdxConfig) -> Self {
        CdxClient { transport, cfg }
    }

    pub fn query_url(&self, url: &str) -> String {
        let query = url::form_urlencoded::Serializer::new(String::new())
            .append_pair("url", url)
            .append_pair("output", "json")
            .append_pair("fl", "urlkey,timestamp,statuscode")
            .append_pair("limit", &self.cfg.limit.to_string())
            .append_pair("sort", "reverse")
            .finish();
        format!("{}?{query}", self.cfg.endpoint)
    }

    pub fn lookup(&self, url: &str) -> CdxOutcome {
        let q = self.query_url(url);
        let mut delay = self.cfg.backoff;
        let mut last = String::new();
        for attempt in 0..self.cfg.attempts.max(1) {
            if attempt > 0 && !delay.is_zero() {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.transport.request(Method::Get, &q) {
                Ok(resp) if resp.status == 200 => {
                    return match parse_cdx_body(&resp.body) {
                        Ok(Some(status)) => CdxOutcome::Captured(status),
                        Ok(None) => CdxOutcome::NoCapture,
                        Err(e) => CdxOutcome::Failed(e),
                    }
                }
                Ok(resp) if resp.status >= 500 || resp.status == 429 => last = format!("http {}", resp.status),
                Ok(resp) => return CdxOutcome::Failed(format!("http {}", resp.status)),
                Err(e @ (TransportError::Timeout | TransportError::Connect(_))) => last = e.to_string(),
                Err(e) => return CdxOutcome::Failed(e.to_string()),
            }
            log::debug!("event=cdx_retry url={url} attempt={} error={last}", attempt + 1);
        }
        CdxOutcome::Failed(last)
    }
}

/// Status of the newest capture with a numeric status; `None` without one.
/// Accepts the JSON row format with or without a header row.
pub fn parse_cdx_body(body: &str) -> Result<Option<u16>, String> {
    let body = body.trim();
    if body.is_empty() {
        return Ok(None);
    }
    let rows: Vec<Vec<String>> = serde_json::from_str(body).map_err(|e| format!("bad cdx json: {e}"))?;
    let (ts_col, status_col, data) = match rows.first() {
        Some(h) if h.iter().any(|c| c == "timestamp") => {
            let find = |name: &str| h.iter().position(|c| c == name).ok_or(format!("cdx header lacks {name}"));
            (find("timestamp")?, find("statuscode")?, &rows[1..])
        }
        _ => (1, 2, &rows[..]),
    };
    Ok(data
        .iter()
        .filter_map(|r| {
            let ts = r.get(ts_col)?;
            let status: u16 = r.get(status_col)?.parse().ok()?;
            (100..=599).contains(&status).then_some((ts.clone(), status))
        })
        .max()
        .map(|(_, s)| s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weblinks::transport::{FixtureEntry, FixtureTransport};

    fn fixture(q: &str, statuses: &[u16], body: &str) -> FixtureTransport {
        FixtureTransport::new(statuses.iter().map(|&s| FixtureEntry {
            method: Method::Get,
            url: q.to_string(),
            status: Some(s),
            location: None,
            body: body.to_string(),
            error: None,
        }))
    }

    fn cfg() -> CdxConfig {
        CdxConfig { backoff: Duration::ZERO, ..Default::default() }
    }

    #[test]
    fn query_shape() {
        let t = FixtureTransport::default();
        let c = CdxClient::new(&t, cfg());
        assert_eq!(
            c.query_url("http://a.org/x?y=1"),
            "https://web.archive.org/cdx/search/cdx?url=http%3A%2F%2Fa.org%2Fx%3Fy%3D1&output=json&fl=urlkey%2Ctimestamp%2Cstatuscode&limit=5&sort=reverse"
        );
    }

    #[test]
    fn capture_no_capture_and_failure() {
        let probe = FixtureTransport::default();
        let q = CdxClient::new(&probe, cfg()).query_url("http://a.org/");
        let body = r#"[["urlkey","timestamp","statuscode"],["org,a)/","20200101000000","301"],["org,a)/","20210101000000","200"],["org,a)/","20220101000000","-"]]"#;
        let t = fixture(&q, &[200], body);
        assert_eq!(CdxClient::new(&t, cfg()).lookup("http://a.org/"), CdxOutcome::Captured(200));
        let t = fixture(&q, &[200], "[]");
        assert_eq!(CdxClient::new(&t, cfg()).lookup("http://a.org/"), CdxOutcome::NoCapture);
        let t = fixture(&q, &[503, 503, 503], "");
        assert!(matches!(CdxClient::new(&t, cfg()).lookup("http://a.org/"), CdxOutcome::Failed(_)));
        assert_eq!(t.requests().len(), 3);
        let t = fixture(&q, &[503, 503, 200], body);
        assert_eq!(CdxClient::new(&t, cfg()).lookup("http://a.org/"), CdxOutcome::Captured(200));
    }

    #[test]
    fn headerless_rows() {
        assert_eq!(parse_cdx_body(r#"[["k","20200101","404"],["k","20190101","200"]]"#), Ok(Some(404)));
        assert!(parse_cdx_body("<html>").is_err());
    }
}

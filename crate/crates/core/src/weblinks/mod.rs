//! Web links found in references and how much of them an archive holds.
//!
//! URLs are cleaned out of reference metadata, looked up against a CDX
//! capture index, optionally live-checked on a sample, and summarized into
//! strict and upper-bound preservation fractions.

mod cdx;
mod clean;
mod live;
mod transport;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, SecondsFormat, Utc};
use rand::seq::IteratorRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

pub use cdx::{parse_cdx_body, CdxClient, CdxConfig, CdxOutcome, DEFAULT_CDX_ENDPOINT};
pub use clean::{clean_url, extract_clean_urls};
pub use live::{check_one, live_check, LiveConfig, MAX_REDIRECTS, UNREACHABLE};
pub use transport::{FixtureEntry, FixtureTransport, HttpResponse, Method, Transport, TransportError, UreqTransport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lookup {
    Captured,
    NoCapture,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeblinkAudit {
    pub url: String,
    pub source_ident: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub archive_status: Option<u16>,
    pub lookup: Lookup,
    /// Live status of the final hop; `0` means unreachable.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub live_status: Option<u16>,
    pub checked_at: String,
}

#[derive(Debug, Clone)]
pub struct AuditOptions {
    pub cdx: CdxConfig,
    /// Concurrent archive lookups.
    pub workers: usize,
    /// Minimum spacing between two archive requests.
    pub cdx_delay: Duration,
    /// Live-check this many uniformly sampled URLs; `None` skips live checks.
    pub live_sample: Option<usize>,
    pub live: LiveConfig,
    pub seed: u64,
    /// Fixed timestamp for reproducible audits; the wall clock otherwise.
    pub checked_at: Option<DateTime<Utc>>,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            cdx: CdxConfig::default(),
            workers: 4,
            cdx_delay: Duration::ZERO,
            live_sample: None,
            live: LiveConfig { per_host_delay: Duration::from_secs(1), workers: 4 },
            seed: 0,
            checked_at: None,
        }
    }
}

/// Uniform sample of `n` items (all of them when fewer), kept in input order.
pub fn sample_uniform<T, I: IntoIterator<Item = T>>(items: I, n: usize, seed: u64) -> Vec<T> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut picked = items.into_iter().enumerate().choose_multiple(&mut rng, n);
    picked.sort_by_key(|(i, _)| *i);
    picked.into_iter().map(|(_, t)| t).collect()
}

fn lookup_all<T: Transport + ?Sized>(t: &T, urls: &[String], opts: &AuditOptions) -> Vec<CdxOutcome> {
    let client = CdxClient::new(t, opts.cdx.clone());
    let next = AtomicUsize::new(0);
    let pace: Mutex<Option<Instant>> = Mutex::new(None);
    let results: Mutex<Vec<Option<CdxOutcome>>> = Mutex::new(vec![None; urls.len()]);
    std::thread::scope(|s| {
        for _ in 0..opts.workers.max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= urls.len() {
                    break;
                }
                if !opts.cdx_delay.is_zero() {
                    let mut last = pace.lock().unwrap();
                    if let Some(prev) = *last {
                        let ready = prev + opts.cdx_delay;
                        let now = Instant::now();
                        if ready > now {
                            std::thread::sleep(ready - now);
                        }
                    }
                    *last = Some(Instant::now());
                }
                let outcome = client.lookup(&urls[i]);
                results.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    results.into_inner().unwrap().into_iter().map(|o| o.expect("every index looked up")).collect()
}

/// Audits `(source_ident, url)` pairs. Output order follows the input.
pub fn audit<T: Transport + ?Sized>(t: &T, links: &[(String, String)], opts: &AuditOptions) -> Vec<WeblinkAudit> {
    let urls: Vec<String> = links.iter().map(|(_, u)| u.clone()).collect();
    let outcomes = lookup_all(t, &urls, opts);
    let mut live: Vec<Option<u16>> = vec![None; links.len()];
    if let Some(n) = opts.live_sample {
        let chosen = sample_uniform(0..links.len(), n, opts.seed);
        let sample: Vec<String> = chosen.iter().map(|&i| urls[i].clone()).collect();
        for (i, status) in chosen.into_iter().zip(live_check(t, &sample, &opts.live)) {
            live[i] = Some(status);
        }
    }
    let stamp = opts.checked_at.unwrap_or_else(Utc::now).to_rfc3339_opts(SecondsFormat::Secs, true);
    links
        .iter()
        .zip(outcomes)
        .zip(live)
        .map(|(((source, url), outcome), live_status)| {
            let (lookup, archive_status) = match outcome {
                CdxOutcome::Captured(s) => (Lookup::Captured, Some(s)),
                CdxOutcome::NoCapture => (Lookup::NoCapture, None),
                CdxOutcome::Failed(e) => {
                    log::warn!("event=cdx_failed url={url} error={e}");
                    (Lookup::Failed, None)
                }
            };
            WeblinkAudit { url: url.clone(), source_ident: source.clone(), archive_status, lookup, live_status, checked_at: stamp.clone() }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub total: u64,
    pub lookups_failed: u64,
    /// Denominator of the preservation fractions: audits whose lookup
    /// succeeded, captured or not.
    pub eligible: u64,
    pub strict_count: u64,
    pub upper_count: u64,
    pub preserved_strict: f64,
    pub preserved_upper: f64,
    pub live_checked: u64,
    pub live_ok: u64,
    pub live_ok_fraction: Option<f64>,
    /// Archive status classes: `200`, `3xx`, `4xx`, `5xx`, `other`, `none`.
    pub archive_classes: BTreeMap<String, u64>,
}

fn ratio(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Strict counts archive status 200; upper adds every 3xx and 5xx.
pub fn coverage_report<'a, I: IntoIterator<Item = &'a WeblinkAudit>>(audits: I) -> CoverageReport {
    let mut r = CoverageReport::default();
    for a in audits {
        r.total += 1;
        if let Some(live) = a.live_status {
            r.live_checked += 1;
            r.live_ok += u64::from(live == 200);
        }
        if a.lookup == Lookup::Failed {
            r.lookups_failed += 1;
            continue;
        }
        r.eligible += 1;
        let class = match a.archive_status {
            Some(200) => "200",
            Some(300..=399) => "3xx",
            Some(400..=499) => "4xx",
            Some(500..=599) => "5xx",
            Some(_) => "other",
            None => "none",
        };
        *r.archive_classes.entry(class.to_string()).or_default() += 1;
        r.strict_count += u64::from(class == "200");
        r.upper_count += u64::from(matches!(class, "200" | "3xx" | "5xx"));
    }
    r.preserved_strict = ratio(r.strict_count, r.eligible);
    r.preserved_upper = ratio(r.upper_count, r.eligible);
    r.live_ok_fraction = (r.live_checked > 0).then(|| ratio(r.live_ok, r.live_checked));
    r
}

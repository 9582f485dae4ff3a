use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::transport::{HttpResponse, Method, Transport};

pub const MAX_REDIRECTS: usize = 5;

/// Status of unreachable hosts and failed connections.
pub const UNREACHABLE: u16 = 0;

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Minimum delay between two requests to the same host.
    pub per_host_delay: Duration,
    pub workers: usize,
}

impl LiveConfig {
    /// `rate` is requests per second per host.
    pub fn with_rate(rate: f64, workers: usize) -> Self {
        assert!(rate > 0.0, "rate must be positive");
        LiveConfig { per_host_delay: Duration::from_secs_f64(1.0 / rate), workers: workers.max(1) }
    }
}

struct Pacer {
    delay: Duration,
    last: Option<Instant>,
}

impl Pacer {
    fn wait(&mut self) {
        if let Some(last) = self.last {
            let ready = last + self.delay;
            let now = Instant::now();
            if ready > now {
                std::thread::sleep(ready - now);
            }
        }
        self.last = Some(Instant::now());
    }
}

/// Follows redirects up to [`MAX_REDIRECTS`] hops. `None` on a transport
/// failure anywhere along the chain.
fn fetch<T: Transport + ?Sized>(t: &T, method: Method, url: &str, pacer: &mut Pacer) -> Option<HttpResponse> {
    let mut current = url.to_string();
    let mut hops = 0;
    loop {
        pacer.wait();
        let resp = t.request(method, &current).ok()?;
        let redirect = (300..400).contains(&resp.status) && hops < MAX_REDIRECTS;
        match resp.location.as_deref().filter(|_| redirect) {
            Some(loc) => {
                let next = url::Url::parse(&current).ok()?.join(loc).ok()?;
                current = next.to_string();
                hops += 1;
            }
            None => return Some(resp),
        }
    }
}

/// HEAD first; GET when HEAD fails or answers with an error status.
pub fn check_one<T: Transport + ?Sized>(t: &T, url: &str, pacer_delay: Duration) -> u16 {
    let mut pacer = Pacer { delay: pacer_delay, last: None };
    check_paced(t, url, &mut pacer)
}

fn check_paced<T: Transport + ?Sized>(t: &T, url: &str, pacer: &mut Pacer) -> u16 {
    let head = fetch(t, Method::Head, url, pacer);
    if let Some(h) = &head {
        if h.status < 400 {
            return h.status;
        }
    }
    match fetch(t, Method::Get, url, pacer) {
        Some(g) => g.status,
        None => head.map_or(UNREACHABLE, |h| h.status),
    }
}

fn host_of(url: &str) -> String {
    url::Url::parse(url).ok().and_then(|u| u.host_str().map(String::from)).unwrap_or_default()
}

/// Live status per URL, in input order. Hosts are served by a bounded pool;
/// a single host is never hit concurrently and is paced by the configured
/// delay.
pub fn live_check<T: Transport + ?Sized>(t: &T, urls: &[String], cfg: &LiveConfig) -> Vec<u16> {
    let mut by_host: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, u) in urls.iter().enumerate() {
        by_host.entry(host_of(u)).or_default().push(i);
    }
    let queue: Mutex<VecDeque<Vec<usize>>> = Mutex::new(by_host.into_values().collect());
    let results: Mutex<Vec<u16>> = Mutex::new(vec![UNREACHABLE; urls.len()]);
    std::thread::scope(|s| {
        for _ in 0..cfg.workers.max(1) {
            s.spawn(|| loop {
                let Some(batch) = queue.lock().unwrap().pop_front() else { break };
                let mut pacer = Pacer { delay: cfg.per_host_delay, last: None };
                for i in batch {
                    let status = check_paced(t, &urls[i], &mut pacer);
                    results.lock().unwrap()[i] = status;
                }
            });
        }
    });
    results.into_inner().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weblinks::transport::{FixtureEntry, FixtureTransport};

    fn e(method: Method, url: &str, status: u16, location: Option<&str>) -> FixtureEntry {
        FixtureEntry { method, url: url.into(), status: Some(status), location: location.map(String::from), body: String::new(), error: None }
    }

    #[test]
    fn examples() {
        let t = FixtureTransport::new([
            e(Method::Head, "http://ok.org/", 200, None),
            e(Method::Head, "http://r.org/a", 301, Some("/b")),
            e(Method::Head, "http://r.org/b", 404, None),
            e(Method::Get, "http://r.org/a", 301, Some("http://r.org/b")),
            e(Method::Get, "http://r.org/b", 404, None),
        ]);
        let cfg = LiveConfig { per_host_delay: Duration::ZERO, workers: 2 };
        let urls: Vec<String> = ["http://ok.org/", "http://r.org/a", "http://refused.org/"].iter().map(|s| s.to_string()).collect();
        assert_eq!(live_check(&t, &urls, &cfg), vec![200, 404, UNREACHABLE]);
    }

    #[test]
    fn head_rejected_falls_back_to_get() {
        let t = FixtureTransport::new([e(Method::Head, "http://x.org/", 405, None), e(Method::Get, "http://x.org/", 200, None)]);
        assert_eq!(check_one(&t, "http://x.org/", Duration::ZERO), 200);
    }

    #[test]
    fn redirect_depth_is_bounded() {
        let entries: Vec<_> = (0..10)
            .flat_map(|i| {
                let from = format!("http://loop.org/{i}");
                let to = format!("/{}", i + 1);
                [e(Method::Head, &from, 302, Some(&to)), e(Method::Get, &from, 302, Some(&to))]
            })
            .collect();
        let t = FixtureTransport::new(entries);
        assert_eq!(check_one(&t, "http://loop.org/0", Duration::ZERO), 302);
        let heads = t.requests().iter().filter(|(m, _)| *m == Method::Head).count();
        assert_eq!(heads, MAX_REDIRECTS + 1);
    }

    #[test]
    fn per_host_pacing() {
        let t = FixtureTransport::new((0..3).map(|i| e(Method::Head, &format!("http://slow.org/{i}"), 200, None)));
        let urls: Vec<String> = (0..3).map(|i| format!("http://slow.org/{i}")).collect();
        let cfg = LiveConfig { per_host_delay: Duration::from_millis(30), workers: 4 };
        let start = Instant::now();
        assert_eq!(live_check(&t, &urls, &cfg), vec![200; 3]);
        assert!(start.elapsed() >= Duration::from_millis(60));
    }
}

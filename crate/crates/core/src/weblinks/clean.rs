use std::sync::LazyLock;

use regex::Regex;

use crate::ingest::RawReference;
use crate::normalize::strip_trailing;

const TRAILING: &[char] = &['.', ',', ';', ')', ']', '"', '\''];
const LEADING: &[char] = &['(', '[', '<', '"', '\''];

/// Hosts whose URLs are identifiers, handled by exact matching instead.
const RESOLVER_HOSTS: &[&str] = &["doi.org", "dx.doi.org", "www.doi.org"];

static URL_IN_TEXT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"(?i)https?://[^\s<>"{}|\\^`]+"#).unwrap());
static DOUBLED_SCHEME: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^(?:https?:/{1,2})+(https?://)").unwrap());

/// Cleans one URL-shaped string. `None` when nothing usable remains or the
/// URL points at a DOI resolver.
pub fn clean_url(raw: &str) -> Option<String> {
    let mut s = raw.trim().trim_start_matches(LEADING).to_string();
    loop {
        let before = s.len();
        s = strip_trailing(&s, TRAILING);
        if let Some(m) = DOUBLED_SCHEME.captures(&s) {
            let inner = m.get(1).unwrap();
            s = s[inner.start()..].to_string();
        }
        if s.len() == before {
            break;
        }
    }
    let (scheme, rest) = s.split_once("://")?;
    let scheme = scheme.to_ascii_lowercase();
    if scheme != "http" && scheme != "https" {
        return None;
    }
    let host_end = rest.find(['/', '?', '#']).unwrap_or(rest.len());
    let (authority, tail) = rest.split_at(host_end);
    let cleaned = format!("{scheme}://{}{tail}", authority.to_lowercase());
    let parsed = url::Url::parse(&cleaned).ok()?;
    let host = parsed.host_str().filter(|h| !h.is_empty())?;
    if RESOLVER_HOSTS.contains(&host) {
        return None;
    }
    Some(cleaned)
}

/// `url` field first, then URL-shaped substrings of the unstructured text;
/// order of first appearance, duplicates removed.
pub fn extract_clean_urls(r: &RawReference) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let from_field = r.biblio.url.as_deref().into_iter().flat_map(|u| {
        // A url field may hold several space-separated URLs or none at all.
        let found: Vec<&str> = URL_IN_TEXT.find_iter(u).map(|m| m.as_str()).collect();
        if found.is_empty() {
            vec![u]
        } else {
            found
        }
    });
    let from_text = r.biblio.unstructured.as_deref().into_iter().flat_map(|t| URL_IN_TEXT.find_iter(t).map(|m| m.as_str()));
    for candidate in from_field.chain(from_text) {
        if let Some(u) = clean_url(candidate) {
            if !out.contains(&u) {
                out.push(u);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Biblio;
    use proptest::prelude::*;

    fn reference(url: Option<&str>, text: Option<&str>) -> RawReference {
        RawReference {
            source_ident: "w1".into(),
            ref_index: 0,
            provenance: "grobid".into(),
            biblio: Biblio { url: url.map(String::from), unstructured: text.map(String::from), ..Default::default() },
            source_year: None,
            source_release_stage: None,
        }
    }

    #[test]
    fn examples() {
        assert_eq!(extract_clean_urls(&reference(None, Some("see http://example.org/x)."))), vec!["http://example.org/x"]);
        assert!(extract_clean_urls(&reference(Some("https://doi.org/10.1/x"), None)).is_empty());
        assert_eq!(extract_clean_urls(&reference(Some("http://http://site.org/a"), None)), vec!["http://site.org/a"]);
    }

    #[test]
    fn field_and_text_deduplicated() {
        let r = reference(Some("HTTP://Example.ORG/Path"), Some("Available at http://example.org/Path. Also https://b.net/q?x=1;"));
        assert_eq!(extract_clean_urls(&r), vec!["http://example.org/Path", "https://b.net/q?x=1"]);
    }

    #[test]
    fn balanced_brackets_survive() {
        assert_eq!(clean_url("https://en.wikipedia.org/wiki/Mercury_(planet))").as_deref(), Some("https://en.wikipedia.org/wiki/Mercury_(planet)"));
        assert_eq!(clean_url("ftp://x.org/a"), None);
        assert_eq!(clean_url("http://"), None);
    }

    proptest! {
        #[test]
        fn extraction_is_idempotent(text in "[a-z ]{0,8}(https?://(http://)?[A-Za-z]{1,6}\\.(org|com)(/[A-Za-z0-9()_.]{0,8})?[.,;)\\]\"']{0,3} ?){0,3}") {
            let once = extract_clean_urls(&reference(None, Some(&text)));
            for u in &once {
                prop_assert_eq!(extract_clean_urls(&reference(Some(u), None)), vec![u.clone()]);
            }
            let joined = once.join(" ");
            prop_assert_eq!(extract_clean_urls(&reference(None, Some(&joined))), once);
        }
    }
}

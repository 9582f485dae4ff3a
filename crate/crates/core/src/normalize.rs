//! Identifier and free-text canonicalization.
//!
//! Equal outputs are meant to imply plausible identity, so every normalizer
//! is strict: input that does not fit the identifier grammar yields `None`
//! rather than a best-effort guess. All functions are idempotent.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Titles whose slug is shorter than this are too weak to use as a key.
pub const MIN_SLUG_LEN: usize = 5;
/// Author tokens shorter than this (initials) are dropped.
pub const MIN_AUTHOR_TOKEN_LEN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Doi,
    Pmid,
    Pmcid,
    Arxiv,
    #[serde(rename = "isbn")]
    Isbn13,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Doi, Scheme::Pmid, Scheme::Pmcid, Scheme::Arxiv, Scheme::Isbn13];

    /// Prefix used in join keys and as the exact-match reason code.
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Doi => "doi",
            Scheme::Pmid => "pmid",
            Scheme::Pmcid => "pmcid",
            Scheme::Arxiv => "arxiv",
            Scheme::Isbn13 => "isbn",
        }
    }

    pub fn normalize(self, raw: &str) -> Option<NormalizedIdentifier> {
        match self {
            Scheme::Doi => normalize_doi(raw),
            Scheme::Pmid => normalize_pmid(raw),
            Scheme::Pmcid => normalize_pmcid(raw),
            Scheme::Arxiv => normalize_arxiv(raw),
            Scheme::Isbn13 => normalize_isbn(raw),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NormalizedIdentifier {
    pub scheme: Scheme,
    pub value: String,
    /// arXiv version number, when one was given.
    pub version: Option<u32>,
}

impl NormalizedIdentifier {
    fn new(scheme: Scheme, value: String) -> Self {
        NormalizedIdentifier { scheme, value, version: None }
    }

    /// Scheme-prefixed join key, e.g. `doi:10.1/x`. Versions are not part of
    /// the key.
    pub fn key(&self) -> String {
        format!("{}:{}", self.scheme.as_str(), self.value)
    }

    /// Canonical text form, including any version suffix.
    pub fn canonical(&self) -> String {
        match self.version {
            Some(v) => format!("{}v{}", self.value, v),
            None => self.value.clone(),
        }
    }
}

static DOI_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^10\.[0-9]{4,9}/[^\s]+$").unwrap());
static DOI_RESOLVER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(?:https?://)?(?:dx\.|www\.)?doi\.org/").unwrap());
static DOI_LABEL_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^doi:\s*").unwrap());
static ARXIV_NEW_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[0-9]{4}\.[0-9]{4,5}$").unwrap());
static ARXIV_OLD_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[a-z][a-z\-]*(?:\.[A-Z]{2})?/[0-9]{7}$").unwrap());
static ARXIV_VERSION_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(.+?)v([0-9]+)$").unwrap());

/// Strips trailing characters from `set`, keeping a closing bracket whose
/// opening counterpart occurs earlier in the string.
pub(crate) fn strip_trailing(s: &str, set: &[char]) -> String {
    let mut out = s.to_string();
    while let Some(c) = out.chars().last() {
        if !set.contains(&c) {
            break;
        }
        let open = match c {
            ')' => Some('('),
            ']' => Some('['),
            _ => None,
        };
        if let Some(open) = open {
            let opens = out.chars().filter(|&x| x == open).count();
            let closes = out.chars().filter(|&x| x == c).count();
            if opens >= closes {
                break;
            }
        }
        out.pop();
    }
    out
}

pub fn normalize_doi(raw: &str) -> Option<NormalizedIdentifier> {
    let mut s = raw.trim();
    loop {
        let before = s;
        if let Some(m) = DOI_LABEL_RE.find(s) {
            s = &s[m.end()..];
        }
        if let Some(m) = DOI_RESOLVER_RE.find(s) {
            s = &s[m.end()..];
        }
        s = s.trim();
        if s == before {
            break;
        }
    }
    let s = strip_trailing(s, &['.', ',', ';', ')']).to_lowercase();
    DOI_RE.is_match(&s).then(|| NormalizedIdentifier::new(Scheme::Doi, s))
}

fn strip_label<'a>(s: &'a str, label: &str) -> &'a str {
    let s = s.trim();
    if s.len() >= label.len() && s.is_char_boundary(label.len()) && s[..label.len()].eq_ignore_ascii_case(label) {
        s[label.len()..].trim_start_matches([':', ' ']).trim()
    } else {
        s
    }
}

fn canonical_digits(s: &str, max_len: usize) -> Option<String> {
    if s.is_empty() || s.len() > max_len || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let trimmed = s.trim_start_matches('0');
    (!trimmed.is_empty()).then(|| trimmed.to_string())
}

pub fn normalize_pmid(raw: &str) -> Option<NormalizedIdentifier> {
    let s = strip_label(raw, "pmid");
    canonical_digits(s, 10).map(|v| NormalizedIdentifier::new(Scheme::Pmid, v))
}

pub fn normalize_pmcid(raw: &str) -> Option<NormalizedIdentifier> {
    let s = strip_label(raw, "pmcid");
    let s = strip_label(s, "pmc");
    canonical_digits(s, 10).map(|v| NormalizedIdentifier::new(Scheme::Pmcid, format!("PMC{v}")))
}

pub fn normalize_arxiv(raw: &str) -> Option<NormalizedIdentifier> {
    let mut s = raw.trim();
    for prefix in ["https://arxiv.org/abs/", "http://arxiv.org/abs/"] {
        if s.len() >= prefix.len() && s.is_char_boundary(prefix.len()) && s[..prefix.len()].eq_ignore_ascii_case(prefix) {
            s = &s[prefix.len()..];
        }
    }
    let s = strip_label(s, "arxiv");
    let (base, version) = match ARXIV_VERSION_RE.captures(s) {
        Some(c) => (c.get(1).unwrap().as_str(), Some(c[2].parse::<u32>().ok()?)),
        None => (s, None),
    };
    if ARXIV_NEW_RE.is_match(base) || ARXIV_OLD_RE.is_match(base) {
        Some(NormalizedIdentifier { scheme: Scheme::Arxiv, value: base.to_string(), version })
    } else {
        None
    }
}

fn isbn13_check_digit(first12: &[u8]) -> u8 {
    let sum: u32 = first12
        .iter()
        .enumerate()
        .map(|(i, d)| u32::from(*d) * if i % 2 == 0 { 1 } else { 3 })
        .sum();
    ((10 - sum % 10) % 10) as u8
}

fn isbn10_is_valid(digits: &[u8]) -> bool {
    let sum: u32 = digits.iter().enumerate().map(|(i, d)| u32::from(*d) * (10 - i as u32)).sum();
    sum % 11 == 0
}

/// Canonicalizes an ISBN to 13 digits. ISBN-10 input is converted by adding
/// the 978 prefix and recomputing the check digit.
pub fn normalize_isbn(raw: &str) -> Option<NormalizedIdentifier> {
    let s = strip_label(raw, "isbn-13");
    let s = strip_label(s, "isbn-10");
    let s = strip_label(s, "isbn");
    let compact: String = s.chars().filter(|c| !matches!(c, '-' | ' ' | '\u{2010}' | '\u{2013}')).collect();
    let digits: Option<Vec<u8>> = compact
        .chars()
        .enumerate()
        .map(|(i, c)| match c {
            '0'..='9' => Some(c as u8 - b'0'),
            'X' | 'x' if i == 9 && compact.len() == 10 => Some(10),
            _ => None,
        })
        .collect();
    let digits = digits?;
    let isbn13: Vec<u8> = match digits.len() {
        10 => {
            if !isbn10_is_valid(&digits) {
                return None;
            }
            let mut d = vec![9, 7, 8];
            d.extend_from_slice(&digits[..9]);
            let check = isbn13_check_digit(&d);
            d.push(check);
            d
        }
        13 => {
            if !(digits.starts_with(&[9, 7, 8]) || digits.starts_with(&[9, 7, 9])) {
                return None;
            }
            if isbn13_check_digit(&digits[..12]) != digits[12] {
                return None;
            }
            digits
        }
        _ => return None,
    };
    let value = isbn13.iter().map(|d| char::from(b'0' + d)).collect();
    Some(NormalizedIdentifier::new(Scheme::Isbn13, value))
}

/// Decomposes, strips diacritics and lowercases.
fn fold(text: &str) -> impl Iterator<Item = char> + '_ {
    text.nfkd().filter(|c| !is_combining_mark(*c)).flat_map(char::to_lowercase)
}

/// ASCII-alphanumeric fold of `text` with no length floor.
pub fn fold_alnum(text: &str) -> String {
    fold(text).filter(char::is_ascii_alphanumeric).collect()
}

pub fn slugify_title(title: &str) -> Option<String> {
    let slug = fold_alnum(title);
    (slug.len() >= MIN_SLUG_LEN).then_some(slug)
}

/// Word-preserving title form: folded, punctuation collapsed to single
/// spaces. Unlike the slug, word boundaries still matter here.
pub fn normalize_title(title: &str) -> String {
    let mut out = String::with_capacity(title.len());
    let mut pending_space = false;
    for c in fold(title) {
        if c.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        } else {
            pending_space = true;
        }
    }
    out
}

/// Tokens of one contributor name, initials dropped.
pub fn name_tokens(name: &str) -> Vec<String> {
    let raw: Vec<&str> = name.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).collect();
    let mut out = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i < raw.len() {
        let mut tok = fold_alnum(raw[i]);
        // Irish patronymic written with a space ("Ó Brien") joins the next token.
        if matches!(raw[i], "O" | "o" | "Ó" | "ó") && i + 1 < raw.len() {
            tok.push_str(&fold_alnum(raw[i + 1]));
            i += 1;
        }
        if tok.len() >= MIN_AUTHOR_TOKEN_LEN {
            out.push(tok);
        }
        i += 1;
    }
    out
}

pub fn tokenize_authors<S: AsRef<str>>(names: &[S]) -> BTreeSet<String> {
    names.iter().flat_map(|n| name_tokens(n.as_ref())).collect()
}

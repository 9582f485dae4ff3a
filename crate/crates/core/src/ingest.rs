//! Newline-delimited JSON input records.
//!
//! Raw aggregator output arrives with hundreds of field combinations and a
//! handful of naming conventions. Parsing maps every known synonym through
//! [`aliases`] onto one canonical shape, normalizes identifiers on the way in,
//! and rejects (never aborts on) lines it cannot use.
//!
//! Serializing a parsed record produces the canonical field names; parsing
//! that output again yields an equal record.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;
use std::sync::LazyLock;

use chrono::Datelike;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::codec::ByteLines;
use crate::error::Result;
use crate::normalize::{normalize_arxiv, normalize_doi, normalize_isbn, normalize_pmcid, normalize_pmid};

pub const MIN_YEAR: i32 = 1500;

/// Years past `current + YEAR_SLACK` are treated as absent.
pub const YEAR_SLACK: i32 = 2;

static MAX_YEAR: LazyLock<i32> = LazyLock::new(|| chrono::Utc::now().year() + YEAR_SLACK);

/// Field synonyms accepted on input. The first name in each list is the
/// canonical one used on output.
pub mod aliases {
    pub const IDENT: &[&str] = &["ident", "release_ident", "id"];
    pub const TITLE: &[&str] = &["title", "article_title"];
    pub const AUTHORS: &[&str] = &["authors", "contrib_raw_names", "contribs", "author"];
    pub const YEAR: &[&str] = &["year", "release_year"];
    pub const STAGE: &[&str] = &["release_stage", "stage"];
    pub const EXT_IDS: &[&str] = &["ext_ids", "ids"];
    pub const RELATED_DOIS: &[&str] = &["related_dois", "related_identifiers"];
    pub const CONTAINER: &[&str] = &["container_name", "journal", "container"];
    pub const VOLUME: &[&str] = &["volume"];
    pub const ISSUE: &[&str] = &["issue"];
    pub const PAGES: &[&str] = &["pages", "page"];
    pub const PUBLISHER: &[&str] = &["publisher"];

    pub const DOI: &[&str] = &["doi"];
    pub const PMID: &[&str] = &["pmid"];
    pub const PMCID: &[&str] = &["pmcid"];
    pub const ARXIV: &[&str] = &["arxiv", "arxiv_id"];
    pub const ISBN13: &[&str] = &["isbn13", "isbn", "isbn_13"];
    pub const ISBN: &[&str] = &["isbn", "isbn13", "isbn_13", "isbn10"];
    pub const OPENLIBRARY: &[&str] = &["openlibrary", "ol"];
    pub const WIKIPEDIA: &[&str] = &["wikipedia"];

    pub const SOURCE: &[&str] = &["source_ident", "release_ident", "source"];
    pub const INDEX: &[&str] = &["index", "ref_index", "key_index"];
    pub const PROVENANCE: &[&str] = &["provenance", "ref_source"];
    pub const BIBLIO: &[&str] = &["biblio"];
    pub const SOURCE_YEAR: &[&str] = &["source_year"];
    pub const SOURCE_STAGE: &[&str] = &["source_release_stage"];
    pub const UNSTRUCTURED: &[&str] = &["unstructured", "raw", "raw_string"];
    pub const URL: &[&str] = &["url"];

    pub const ARTICLE_TITLE: &[&str] = &["article_title", "page_title"];
    pub const CITED: &[&str] = &["cited", "citation", "biblio"];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReleaseStage {
    Published,
    Preprint,
    Submitted,
    Updated,
    #[default]
    Unknown,
}

impl ReleaseStage {
    pub fn parse(s: &str) -> ReleaseStage {
        match s.trim().to_ascii_lowercase().as_str() {
            "published" | "accepted" => ReleaseStage::Published,
            "preprint" | "draft" => ReleaseStage::Preprint,
            "submitted" => ReleaseStage::Submitted,
            "updated" => ReleaseStage::Updated,
            _ => ReleaseStage::Unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExtIds {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doi: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pmid: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pmcid: Option<String>,
    /// Canonical arXiv id including a `vN` suffix when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arxiv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub isbn13: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub openlibrary: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wikipedia: Option<String>,
}

impl ExtIds {
    pub fn is_empty(&self) -> bool {
        *self == ExtIds::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReleaseRecord {
    pub ident: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub authors: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
    #[serde(default)]
    pub release_stage: ReleaseStage,
    #[serde(skip_serializing_if = "ExtIds::is_empty", default)]
    pub ext_ids: ExtIds,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub container_name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub volume: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub issue: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pages: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub publisher: Option<String>,
    /// DOIs this record asserts a relation to (e.g. DataCite related
    /// identifiers).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub related_dois: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Biblio {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unstructured: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub authors: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doi: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pmid: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pmcid: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arxiv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub isbn: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub container_name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub volume: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pages: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawReference {
    pub source_ident: String,
    pub ref_index: u32,
    pub provenance: String,
    pub biblio: Biblio,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_year: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_release_stage: Option<ReleaseStage>,
}

impl RawReference {
    /// `source_ident + "_" + ref_index`; one reference resolves to at most
    /// one target under this key.
    pub fn edge_key(&self) -> String {
        format!("{}_{}", self.source_ident, self.ref_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WikipediaRow {
    pub article_title: String,
    pub cited: Biblio,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reject {
    InvalidUtf8,
    Malformed(String),
    NotAnObject,
    MissingIdent,
    NoContent,
}

impl Reject {
    pub fn label(&self) -> &'static str {
        match self {
            Reject::InvalidUtf8 => "invalid_utf8",
            Reject::Malformed(_) => "malformed_json",
            Reject::NotAnObject => "not_an_object",
            Reject::MissingIdent => "missing_ident",
            Reject::NoContent => "no_content",
        }
    }
}

impl fmt::Display for Reject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reject::Malformed(e) => write!(f, "malformed json: {e}"),
            other => f.write_str(other.label()),
        }
    }
}

impl std::error::Error for Reject {}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub accepted: u64,
    pub rejected: u64,
    pub reject_reasons: BTreeMap<String, u64>,
}

impl IngestStats {
    pub fn total(&self) -> u64 {
        self.accepted + self.rejected
    }

    pub fn record_reject(&mut self, reject: &Reject) {
        self.rejected += 1;
        *self.reject_reasons.entry(reject.label().to_string()).or_default() += 1;
    }

    pub fn merge(&mut self, other: &IngestStats) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        for (k, v) in &other.reject_reasons {
            *self.reject_reasons.entry(k.clone()).or_default() += v;
        }
    }
}

fn parse_object(line: &str) -> Result<Map<String, Value>, Reject> {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Reject::NotAnObject),
        Err(e) => Err(Reject::Malformed(e.to_string())),
    }
}

fn field<'a>(obj: &'a Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| obj.get(*n).filter(|v| !v.is_null()))
}

fn text_of(v: &Value) -> Option<String> {
    let s = match v {
        Value::String(s) => s.trim().to_string(),
        Value::Number(n) => n.to_string(),
        _ => return None,
    };
    (!s.is_empty()).then_some(s)
}

fn text(obj: &Map<String, Value>, names: &[&str]) -> Option<String> {
    field(obj, names).and_then(text_of)
}

fn names_of(v: &Value) -> Vec<String> {
    match v {
        Value::Array(items) => items
            .iter()
            .filter_map(|item| match item {
                Value::Object(o) => text(o, &["raw_name", "name", "full_name"]).or_else(|| {
                    let given = text(o, &["given_name", "given"]);
                    let family = text(o, &["surname", "family"]);
                    match (given, family) {
                        (Some(g), Some(f)) => Some(format!("{g} {f}")),
                        (g, f) => f.or(g),
                    }
                }),
                other => text_of(other),
            })
            .collect(),
        other => text_of(other).into_iter().collect(),
    }
}

/// Parses a year from a number or a date-like string; out-of-range years are
/// treated as absent.
pub fn clean_year(v: &Value) -> Option<i32> {
    let year = match v {
        Value::Number(n) => n.as_i64().and_then(|y| i32::try_from(y).ok()),
        Value::String(s) => {
            let digits: String = s.trim().chars().take_while(|c| c.is_ascii_digit()).collect();
            if digits.len() == 4 {
                digits.parse().ok()
            } else {
                None
            }
        }
        _ => None,
    }?;
    (MIN_YEAR..=*MAX_YEAR).contains(&year).then_some(year)
}

fn year(obj: &Map<String, Value>, names: &[&str]) -> Option<i32> {
    field(obj, names).and_then(clean_year)
}

fn normalized(obj: &Map<String, Value>, names: &[&str], f: fn(&str) -> Option<crate::normalize::NormalizedIdentifier>) -> Option<String> {
    text(obj, names).and_then(|raw| f(&raw)).map(|n| n.canonical())
}

fn parse_ext_ids(obj: &Map<String, Value>) -> ExtIds {
    let Some(Value::Object(ids)) = field(obj, aliases::EXT_IDS) else {
        return ExtIds::default();
    };
    ExtIds {
        doi: normalized(ids, aliases::DOI, normalize_doi),
        pmid: normalized(ids, aliases::PMID, normalize_pmid),
        pmcid: normalized(ids, aliases::PMCID, normalize_pmcid),
        arxiv: normalized(ids, aliases::ARXIV, normalize_arxiv),
        isbn13: normalized(ids, aliases::ISBN13, normalize_isbn),
        openlibrary: text(ids, aliases::OPENLIBRARY).and_then(|s| normalize_openlibrary(&s)),
        wikipedia: text(ids, aliases::WIKIPEDIA),
    }
}

/// Open Library keys look like `OL123M` (edition) or `OL45W` (work); any
/// `/books/` or `/works/` path prefix is dropped.
pub fn normalize_openlibrary(raw: &str) -> Option<String> {
    let s = raw.trim().rsplit('/').next()?.to_ascii_uppercase();
    let body = s.strip_prefix("OL")?;
    let (digits, kind) = body.split_at(body.len().checked_sub(1)?);
    (!digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) && matches!(kind, "M" | "W" | "A")).then_some(s)
}

pub fn parse_release(line: &str) -> Result<ReleaseRecord, Reject> {
    let obj = parse_object(line)?;
    let ident = text(&obj, aliases::IDENT).ok_or(Reject::MissingIdent)?;
    let related_dois = field(&obj, aliases::RELATED_DOIS)
        .map(names_of)
        .unwrap_or_default()
        .into_iter()
        .filter_map(|d| normalize_doi(&d).map(|n| n.value))
        .collect();
    Ok(ReleaseRecord {
        ident,
        title: text(&obj, aliases::TITLE),
        authors: field(&obj, aliases::AUTHORS).map(names_of).unwrap_or_default(),
        year: year(&obj, aliases::YEAR),
        release_stage: text(&obj, aliases::STAGE).map(|s| ReleaseStage::parse(&s)).unwrap_or_default(),
        ext_ids: parse_ext_ids(&obj),
        container_name: text(&obj, aliases::CONTAINER),
        volume: text(&obj, aliases::VOLUME),
        issue: text(&obj, aliases::ISSUE),
        pages: text(&obj, aliases::PAGES),
        publisher: text(&obj, aliases::PUBLISHER),
        related_dois,
    })
}

fn parse_biblio(obj: &Map<String, Value>) -> Result<Biblio, Reject> {
    // Content is judged on the raw fields: a reference whose only field is a
    // malformed identifier is still a reference, just an unmatchable one.
    let has_content = obj.values().any(|v| match v {
        Value::Null => false,
        Value::String(s) => !s.trim().is_empty(),
        Value::Array(a) => !a.is_empty(),
        Value::Object(o) => !o.is_empty(),
        _ => true,
    });
    if !has_content {
        return Err(Reject::NoContent);
    }
    Ok(Biblio {
        unstructured: text(obj, aliases::UNSTRUCTURED),
        title: text(obj, aliases::TITLE),
        authors: field(obj, aliases::AUTHORS).map(names_of).unwrap_or_default(),
        year: year(obj, aliases::YEAR),
        doi: normalized(obj, aliases::DOI, normalize_doi),
        pmid: normalized(obj, aliases::PMID, normalize_pmid),
        pmcid: normalized(obj, aliases::PMCID, normalize_pmcid),
        arxiv: normalized(obj, aliases::ARXIV, normalize_arxiv),
        isbn: normalized(obj, aliases::ISBN, normalize_isbn),
        url: text(obj, aliases::URL),
        container_name: text(obj, aliases::CONTAINER),
        volume: text(obj, aliases::VOLUME),
        pages: text(obj, aliases::PAGES),
    })
}

/// Stateful reference parser: assigns `ref_index` by order of appearance
/// within each source when the input carries none.
#[derive(Debug, Default)]
pub struct RefParser {
    seen: HashMap<String, u32>,
}

impl RefParser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(&mut self, line: &str) -> Result<RawReference, Reject> {
        let obj = parse_object(line)?;
        let source_ident = text(&obj, aliases::SOURCE).ok_or(Reject::MissingIdent)?;
        let biblio = match field(&obj, aliases::BIBLIO) {
            Some(Value::Object(b)) => parse_biblio(b)?,
            _ => return Err(Reject::NoContent),
        };
        let position = self.seen.entry(source_ident.clone()).or_insert(0);
        let explicit = field(&obj, aliases::INDEX).and_then(|v| match v {
            Value::Number(n) => n.as_u64().and_then(|i| u32::try_from(i).ok()),
            Value::String(s) => s.trim().parse().ok(),
            _ => None,
        });
        let ref_index = explicit.unwrap_or(*position);
        *position += 1;
        Ok(RawReference {
            source_ident,
            ref_index,
            provenance: text(&obj, aliases::PROVENANCE).unwrap_or_else(|| "unknown".to_string()),
            biblio,
            source_year: year(&obj, aliases::SOURCE_YEAR),
            source_release_stage: text(&obj, aliases::SOURCE_STAGE).map(|s| ReleaseStage::parse(&s)),
        })
    }
}

/// Single-line convenience wrapper; the index, if absent, becomes 0.
pub fn parse_raw_reference(line: &str) -> Result<RawReference, Reject> {
    RefParser::new().parse(line)
}

pub fn parse_wikipedia_row(line: &str) -> Result<WikipediaRow, Reject> {
    let obj = parse_object(line)?;
    let article_title = text(&obj, aliases::ARTICLE_TITLE).ok_or(Reject::MissingIdent)?;
    let cited = match field(&obj, aliases::CITED) {
        Some(Value::Object(b)) => parse_biblio(b)?,
        _ => return Err(Reject::NoContent),
    };
    Ok(WikipediaRow { article_title, cited })
}

/// Open Library edition dump line. The edition key becomes the ident and the
/// first work key goes to `ext_ids.openlibrary`, so editions of one work can
/// be collapsed later.
pub fn parse_edition(line: &str) -> Result<ReleaseRecord, Reject> {
    let obj = parse_object(line)?;
    let ident = text(&obj, &["key"]).and_then(|k| normalize_openlibrary(&k)).ok_or(Reject::MissingIdent)?;
    let work = match field(&obj, &["works"]) {
        Some(Value::Array(ws)) => ws.iter().find_map(|w| match w {
            Value::Object(o) => text(o, &["key"]),
            other => text_of(other),
        }),
        _ => None,
    };
    let first_isbn = |names: &[&str]| match field(&obj, names) {
        Some(Value::Array(xs)) => xs.iter().filter_map(text_of).find_map(|s| normalize_isbn(&s)),
        Some(other) => text_of(other).and_then(|s| normalize_isbn(&s)),
        None => None,
    };
    let year = field(&obj, &["publish_date"]).and_then(|v| match v {
        Value::String(s) => PUBLISH_YEAR.find(s).and_then(|m| clean_year(&Value::String(m.as_str().to_string()))),
        other => clean_year(other),
    });
    Ok(ReleaseRecord {
        ident,
        title: text(&obj, aliases::TITLE),
        authors: field(&obj, aliases::AUTHORS).map(names_of).unwrap_or_default(),
        year,
        release_stage: ReleaseStage::Published,
        ext_ids: ExtIds {
            isbn13: first_isbn(&["isbn_13"]).or_else(|| first_isbn(&["isbn_10"])).map(|n| n.canonical()),
            openlibrary: work.and_then(|w| normalize_openlibrary(&w)),
            ..ExtIds::default()
        },
        publisher: match field(&obj, &["publishers"]) {
            Some(Value::Array(ps)) => ps.iter().find_map(text_of),
            Some(other) => text_of(other),
            None => None,
        },
        ..ReleaseRecord::default()
    })
}

// Dates like "May 1999" or "1999-05"; the first plausible four-digit run.
static PUBLISH_YEAR: LazyLock<regex::Regex> = LazyLock::new(|| regex::Regex::new(r"\b(1[5-9]|20)\d\d\b").unwrap());

/// Feeds every accepted record of a line stream to `sink`, counting rejects.
/// `sink` errors abort the stream; parse failures never do.
pub fn for_each_record<R, T, P, F>(lines: ByteLines<R>, mut parse: P, mut sink: F) -> Result<IngestStats>
where
    R: BufRead,
    P: FnMut(&str) -> Result<T, Reject>,
    F: FnMut(T) -> Result<()>,
{
    let mut stats = IngestStats::default();
    for line in lines {
        let line = line?;
        let parsed = std::str::from_utf8(&line).map_err(|_| Reject::InvalidUtf8).and_then(&mut parse);
        match parsed {
            Ok(record) => {
                stats.accepted += 1;
                sink(record)?;
            }
            Err(reject) => {
                log::debug!("event=reject reason={} line_len={}", reject.label(), line.len());
                stats.record_reject(&reject);
            }
        }
    }
    Ok(stats)
}

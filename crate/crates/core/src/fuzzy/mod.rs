//! Fuzzy matching for references without identifiers.
//!
//! Candidate generation is generous: every record sharing a title slug
//! lands in one group. Verification is strict: each (reference, release) pair
//! in a group goes through the ordered rule cascade in [`verify`] and only
//! `exact` and `strong` verdicts become edges.

mod regression;
mod verify;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use regression::{load_labeled_pairs, parse_labeled_pair, run_regression, LabeledPair, RegressionFailure, RegressionReport};
pub use verify::{jaccard, verify, verify_with, Features, VerifyConfig, DEFAULT_STOPLIST};

use crate::error::Result;
use crate::exactmatch::{extract_ref_keys, Side};
use crate::fuse::{BiblioRef, EdgeStatus};
use crate::ingest::{RawReference, ReleaseRecord, WikipediaRow};
use crate::mapreduce::{line_fields, par_group_reduce, par_map_to_tsv, ExternalSorter, GroupOptions, GroupStats, MapStats, SortSpec, TsvRow};
use crate::normalize::slugify_title;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchStatus {
    Exact,
    Strong,
    Weak,
    Different,
    Ambiguous,
}

impl MatchStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchStatus::Exact => "exact",
            MatchStatus::Strong => "strong",
            MatchStatus::Weak => "weak",
            MatchStatus::Different => "different",
            MatchStatus::Ambiguous => "ambiguous",
        }
    }

    pub fn parse(s: &str) -> Option<MatchStatus> {
        Some(match s.trim() {
            "exact" => MatchStatus::Exact,
            "strong" => MatchStatus::Strong,
            "weak" => MatchStatus::Weak,
            "different" => MatchStatus::Different,
            "ambiguous" => MatchStatus::Ambiguous,
            _ => return None,
        })
    }

    /// Verdicts that become edges.
    pub fn is_match(self) -> bool {
        matches!(self, MatchStatus::Exact | MatchStatus::Strong)
    }
}

impl fmt::Display for MatchStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

/// Reason codes: identifier schemes for exact joins, rule names for
/// verification verdicts.
///
/// Declaration order is the fusion tie-break precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchReason {
    Doi,
    Pmid,
    Pmcid,
    Arxiv,
    Isbn,
    Blacklisted,
    TitleAuthorMatch,
    VersionedDoi,
    ArxivVersion,
    PmidDoiPair,
    DataciteRelatedId,
    YearConflict,
    JaccardAuthors,
    TokenizedAuthors,
    SlugTitleAuthorMatch,
    ContribMismatch,
    Unknown,
}

impl MatchReason {
    pub const RULES: [MatchReason; 11] = [
        MatchReason::Blacklisted,
        MatchReason::TitleAuthorMatch,
        MatchReason::VersionedDoi,
        MatchReason::ArxivVersion,
        MatchReason::PmidDoiPair,
        MatchReason::DataciteRelatedId,
        MatchReason::YearConflict,
        MatchReason::JaccardAuthors,
        MatchReason::TokenizedAuthors,
        MatchReason::SlugTitleAuthorMatch,
        MatchReason::ContribMismatch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MatchReason::Doi => "doi",
            MatchReason::Pmid => "pmid",
            MatchReason::Pmcid => "pmcid",
            MatchReason::Arxiv => "arxiv",
            MatchReason::Isbn => "isbn",
            MatchReason::Blacklisted => "blacklisted",
            MatchReason::TitleAuthorMatch => "titleauthormatch",
            MatchReason::VersionedDoi => "versioneddoi",
            MatchReason::ArxivVersion => "arxivversion",
            MatchReason::PmidDoiPair => "pmiddoipair",
            MatchReason::DataciteRelatedId => "dataciterelatedid",
            MatchReason::YearConflict => "yearconflict",
            MatchReason::JaccardAuthors => "jaccardauthors",
            MatchReason::TokenizedAuthors => "tokenizedauthors",
            MatchReason::SlugTitleAuthorMatch => "slugtitleauthormatch",
            MatchReason::ContribMismatch => "contribmismatch",
            MatchReason::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Option<MatchReason> {
        let s = s.trim();
        [
            MatchReason::Doi,
            MatchReason::Pmid,
            MatchReason::Pmcid,
            MatchReason::Arxiv,
            MatchReason::Isbn,
            MatchReason::Unknown,
        ]
        .into_iter()
        .chain(MatchReason::RULES)
        .find(|r| r.as_str() == s)
    }

    pub fn is_identifier(self) -> bool {
        matches!(self, MatchReason::Doi | MatchReason::Pmid | MatchReason::Pmcid | MatchReason::Arxiv | MatchReason::Isbn)
    }
}

impl fmt::Display for MatchReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchResult {
    pub status: MatchStatus,
    pub reason: MatchReason,
}

impl MatchResult {
    pub fn new(status: MatchStatus, reason: MatchReason) -> Self {
        MatchResult { status, reason }
    }
}

/// Records that can take part in slug-based candidate generation.
pub trait Candidate {
    fn candidate_title(&self) -> Option<&str>;
}

impl Candidate for ReleaseRecord {
    fn candidate_title(&self) -> Option<&str> {
        self.title.as_deref()
    }
}

impl Candidate for RawReference {
    fn candidate_title(&self) -> Option<&str> {
        self.biblio.title.as_deref()
    }
}

impl Candidate for WikipediaRow {
    fn candidate_title(&self) -> Option<&str> {
        self.cited.title.as_deref()
    }
}

/// Title slug used as the grouping key; absent without a (long enough) title.
pub fn candidate_key<C: Candidate + ?Sized>(rec: &C) -> Option<String> {
    rec.candidate_title().and_then(slugify_title)
}

/// Lifts a reference to a release-shaped record so one verifier serves all
/// pairings. The pseudo ident is the reference's edge key.
pub fn pseudo_release(r: &RawReference) -> ReleaseRecord {
    let b = &r.biblio;
    let mut rec = ReleaseRecord {
        ident: r.edge_key(),
        title: b.title.clone(),
        authors: b.authors.clone(),
        year: b.year,
        container_name: b.container_name.clone(),
        volume: b.volume.clone(),
        pages: b.pages.clone(),
        ..Default::default()
    };
    rec.ext_ids.doi = b.doi.clone();
    rec.ext_ids.pmid = b.pmid.clone();
    rec.ext_ids.pmcid = b.pmcid.clone();
    rec.ext_ids.arxiv = b.arxiv.clone();
    rec.ext_ids.isbn13 = b.isbn.clone();
    rec
}

/// Groups larger than this are skipped as hot keys.
pub const DEFAULT_GROUP_CAP: usize = 10_000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FuzzyStats {
    pub refs_keyed: u64,
    pub releases_keyed: u64,
    pub pairs_verified: u64,
    pub edges: u64,
    pub self_citations: u64,
    pub groups: u64,
    pub hot_keys: u64,
    pub failed_groups: u64,
}

#[derive(Debug, Default)]
pub struct GroupMatches {
    pub edges: Vec<BiblioRef>,
    pub pairs_verified: u64,
    pub self_citations: u64,
}

/// Verifies every (reference, release) pair of one slug group.
pub fn match_group(refs: &[RawReference], releases: &[ReleaseRecord], cfg: &VerifyConfig) -> GroupMatches {
    let mut out = GroupMatches::default();
    if refs.is_empty() || releases.is_empty() {
        return out;
    }
    let release_features: Vec<Features> = releases.iter().map(Features::of).collect();
    for r in refs {
        let rf = Features::of(&pseudo_release(r));
        for (rel, relf) in releases.iter().zip(&release_features) {
            out.pairs_verified += 1;
            let result = verify_with(&rf, relf, cfg);
            let status = match result.status {
                MatchStatus::Exact => EdgeStatus::Exact,
                MatchStatus::Strong => EdgeStatus::Strong,
                _ => continue,
            };
            if rel.ident == r.source_ident {
                out.self_citations += 1;
                continue;
            }
            out.edges.push(BiblioRef::matched(r, rel, status, result.reason));
        }
    }
    out
}

/// Decodes one `slug<TAB>side<TAB>json` group into refs and releases.
pub(crate) fn decode_group(lines: &[Vec<u8>]) -> std::result::Result<(Vec<RawReference>, Vec<ReleaseRecord>), String> {
    let mut refs = Vec::new();
    let mut releases = Vec::new();
    for line in lines {
        let fields = line_fields(line);
        let [_, side, payload] = fields.as_slice() else {
            return Err(format!("expected 3 columns, found {}", fields.len()));
        };
        match Side::parse(side) {
            Some(Side::Ref) => refs.push(serde_json::from_str(payload).map_err(|e| e.to_string())?),
            Some(Side::Release) => releases.push(serde_json::from_str(payload).map_err(|e| e.to_string())?),
            None => return Err(format!("unknown side {side:?}")),
        }
    }
    Ok((refs, releases))
}

/// Slug rows for every release with a usable title.
pub fn release_slug_rows(r: &ReleaseRecord) -> Vec<TsvRow> {
    match candidate_key(r) {
        Some(slug) => vec![TsvRow::new(slug).field(Side::Release.as_str()).field(serde_json::to_string(r).expect("serializable"))],
        None => vec![],
    }
}

/// Slug rows for references carrying no usable identifier.
pub fn ref_slug_rows(r: &RawReference) -> Vec<TsvRow> {
    if !extract_ref_keys(r).is_empty() {
        return vec![];
    }
    match candidate_key(r) {
        Some(slug) => vec![TsvRow::new(slug).field(Side::Ref.as_str()).field(serde_json::to_string(r).expect("serializable"))],
        None => vec![],
    }
}

/// Full fuzzy stage: slug keys, external sort, per-group verification.
pub fn fuzzy_stage<RI, LI, S>(
    refs: RI,
    releases: LI,
    spec: &SortSpec,
    cap: usize,
    cfg: &VerifyConfig,
    mut sink: S,
) -> Result<FuzzyStats>
where
    RI: IntoIterator<Item = RawReference>,
    LI: IntoIterator<Item = ReleaseRecord>,
    S: FnMut(BiblioRef) -> Result<()>,
{
    let mut sorter = ExternalSorter::new(spec.clone().with_stable(true))?;
    let par = spec.parallelism;
    let ref_stats: MapStats = par_map_to_tsv(refs, par, ref_slug_rows, &mut sorter, |_| {})?;
    let rel_stats: MapStats = par_map_to_tsv(releases, par, release_slug_rows, &mut sorter, |_| {})?;
    let mut stats = FuzzyStats { refs_keyed: ref_stats.lines, releases_keyed: rel_stats.lines, ..Default::default() };
    let sorted = sorter.finish()?;
    let opts = GroupOptions::default().with_cap(cap).with_parallelism(par);
    let group_stats: GroupStats = par_group_reduce(
        sorted,
        opts,
        |_, lines| decode_group(lines).map(|(refs, rels)| match_group(&refs, &rels, cfg)),
        |m| {
            stats.pairs_verified += m.pairs_verified;
            stats.self_citations += m.self_citations;
            for e in m.edges {
                stats.edges += 1;
                sink(e)?;
            }
            Ok(())
        },
    )?;
    stats.groups = group_stats.groups;
    stats.hot_keys = group_stats.hot_keys;
    stats.failed_groups = group_stats.failed;
    Ok(stats)
}

use std::collections::BTreeSet;

use regex::Regex;
use std::sync::LazyLock;

use super::{MatchReason, MatchResult, MatchStatus};
use crate::ingest::ReleaseRecord;
use crate::normalize::{fold_alnum, name_tokens, normalize_arxiv, normalize_title, slugify_title, tokenize_authors};

/// Title slugs too generic to verify on: front matter, notices and the like.
pub const DEFAULT_STOPLIST: &[&str] = &[
    "editorial",
    "editorialboard",
    "editorsnote",
    "introduction",
    "erratum",
    "errata",
    "corrigendum",
    "correction",
    "retraction",
    "retractionnotice",
    "preface",
    "foreword",
    "contents",
    "tableofcontents",
    "frontmatter",
    "backmatter",
    "index",
    "subjectindex",
    "authorindex",
    "bookreview",
    "bookreviews",
    "reply",
    "letter",
    "lettertotheeditor",
    "commentary",
    "discussion",
    "abstracts",
    "acknowledgments",
    "acknowledgements",
    "references",
    "bibliography",
    "obituary",
    "announcement",
    "announcements",
    "news",
    "untitled",
    "appendix",
    "conclusion",
    "conclusions",
    "supplementarymaterial",
    "notesoncontributors",
];

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub jaccard_strong: f64,
    pub jaccard_weak: f64,
    pub max_year_delta: i32,
    pub stoplist: BTreeSet<String>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            jaccard_strong: 0.5,
            jaccard_weak: 0.2,
            max_year_delta: 2,
            stoplist: DEFAULT_STOPLIST.iter().map(|s| s.to_string()).collect(),
        }
    }
}

static DOI_VERSION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?:\.v|/v)[0-9]+$").unwrap());

/// Everything the cascade looks at, computed once per record.
#[derive(Debug, Clone, Default)]
pub struct Features {
    pub slug: Option<String>,
    pub title: Option<String>,
    pub year: Option<i32>,
    pub authors: BTreeSet<String>,
    /// Per-contributor token sets in byline order, empty sets dropped.
    pub byline: Vec<BTreeSet<String>>,
    pub first_surname: Option<String>,
    pub doi: Option<String>,
    pub doi_base: Option<String>,
    pub doi_versioned: bool,
    pub arxiv_base: Option<String>,
    pub pmid: Option<String>,
    pub related_dois: BTreeSet<String>,
}

impl Features {
    pub fn of(rec: &ReleaseRecord) -> Features {
        let doi = rec.ext_ids.doi.clone();
        Features {
            slug: rec.title.as_deref().and_then(slugify_title),
            title: rec.title.as_deref().map(normalize_title).filter(|t| !t.is_empty()),
            year: rec.year,
            authors: tokenize_authors(&rec.authors),
            byline: rec
                .authors
                .iter()
                .map(|n| name_tokens(n).into_iter().collect::<BTreeSet<_>>())
                .filter(|s| !s.is_empty())
                .collect(),
            first_surname: rec.authors.first().and_then(|n| surname(n)),
            doi_base: doi.as_deref().map(|d| DOI_VERSION.replace(d, "").into_owned()),
            doi_versioned: doi.as_deref().is_some_and(|d| DOI_VERSION.is_match(d)),
            doi,
            arxiv_base: rec.ext_ids.arxiv.as_deref().and_then(normalize_arxiv).map(|n| n.value),
            pmid: rec.ext_ids.pmid.clone(),
            related_dois: rec.related_dois.iter().cloned().collect(),
        }
    }
}

/// `Family, Given` yields the part before the comma, otherwise the last
/// whitespace token.
fn surname(name: &str) -> Option<String> {
    let part = match name.split_once(',') {
        Some((family, _)) => family,
        None => name.split_whitespace().last()?,
    };
    let s = fold_alnum(part);
    (!s.is_empty()).then_some(s)
}

/// `|a ∩ b| / |a ∪ b|`, zero when both are empty.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn verify(a: &ReleaseRecord, b: &ReleaseRecord) -> MatchResult {
    verify_with(&Features::of(a), &Features::of(b), &VerifyConfig::default())
}

fn both<'a, T: PartialEq>(a: &'a Option<T>, b: &'a Option<T>) -> Option<(&'a T, &'a T)> {
    Some((a.as_ref()?, b.as_ref()?))
}

/// Ordered rule cascade; the first rule that fires decides.
pub fn verify_with(a: &Features, b: &Features, cfg: &VerifyConfig) -> MatchResult {
    use MatchReason as R;
    use MatchStatus as S;
    let hit = MatchResult::new;

    let blacklisted = |f: &Features| f.slug.as_ref().is_some_and(|s| cfg.stoplist.contains(s));
    if blacklisted(a) || blacklisted(b) {
        return hit(S::Ambiguous, R::Blacklisted);
    }

    let years_agree = match (a.year, b.year) {
        (Some(x), Some(y)) => x == y,
        _ => true,
    };
    if let Some((ta, tb)) = both(&a.title, &b.title) {
        if ta == tb && !a.byline.is_empty() && a.byline == b.byline && years_agree {
            return hit(S::Exact, R::TitleAuthorMatch);
        }
    }

    // Identical unversioned DOIs are the exact join's business; here they
    // fall through so the pmid+doi rule stays reachable.
    if (a.doi_versioned || b.doi_versioned) && both(&a.doi_base, &b.doi_base).is_some_and(|(x, y)| x == y) {
        return hit(S::Strong, R::VersionedDoi);
    }
    if both(&a.arxiv_base, &b.arxiv_base).is_some_and(|(x, y)| x == y) {
        return hit(S::Strong, R::ArxivVersion);
    }
    if both(&a.pmid, &b.pmid).is_some_and(|(x, y)| x == y) && both(&a.doi, &b.doi).is_some_and(|(x, y)| x == y) {
        return hit(S::Strong, R::PmidDoiPair);
    }
    let related = |x: &Features, y: &Features| y.doi.as_ref().is_some_and(|d| x.related_dois.contains(d));
    if related(a, b) || related(b, a) {
        return hit(S::Strong, R::DataciteRelatedId);
    }

    if let (Some(x), Some(y)) = (a.year, b.year) {
        if (x - y).abs() > cfg.max_year_delta {
            return hit(S::Different, R::YearConflict);
        }
    }

    let same_slug = both(&a.slug, &b.slug).is_some_and(|(x, y)| x == y);
    if !same_slug {
        return hit(S::Different, R::ContribMismatch);
    }

    let j = jaccard(&a.authors, &b.authors);
    if j >= cfg.jaccard_strong {
        return hit(S::Strong, R::JaccardAuthors);
    }
    let non_empty = !a.authors.is_empty() && !b.authors.is_empty();
    if non_empty && (a.authors.is_subset(&b.authors) || b.authors.is_subset(&a.authors)) {
        return hit(S::Strong, R::TokenizedAuthors);
    }
    if both(&a.first_surname, &b.first_surname).is_some_and(|(x, y)| x == y) {
        return hit(S::Strong, R::SlugTitleAuthorMatch);
    }
    if non_empty && j < cfg.jaccard_weak {
        return hit(S::Different, R::ContribMismatch);
    }

    if !non_empty {
        hit(S::Weak, R::TokenizedAuthors)
    } else {
        hit(S::Weak, R::JaccardAuthors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(title: &str, authors: &[&str], year: Option<i32>) -> ReleaseRecord {
        ReleaseRecord {
            ident: "x".into(),
            title: Some(title.into()),
            authors: authors.iter().map(|s| s.to_string()).collect(),
            year,
            ..Default::default()
        }
    }

    #[test]
    fn jaccard_hand_values() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(jaccard(&s(&[]), &s(&[])), 0.0);
        assert_eq!(jaccard(&s(&["a", "b"]), &s(&["b", "c"])), 1.0 / 3.0);
        assert_eq!(jaccard(&s(&["a"]), &s(&["a"])), 1.0);
    }

    #[test]
    fn surnames() {
        assert_eq!(surname("Smith, John").as_deref(), Some("smith"));
        assert_eq!(surname("John Smith").as_deref(), Some("smith"));
        assert_eq!(surname("   "), None);
    }

    #[test]
    fn cascade_examples() {
        let a = rec("Graph Rewriting", &["Ann Smith", "Bo Doe"], Some(2001));
        assert_eq!(verify(&a, &a.clone()), MatchResult::new(MatchStatus::Exact, MatchReason::TitleAuthorMatch));
        let b = rec("Graph Rewriting", &["Ann Smith", "Bo Doe"], Some(2010));
        assert_eq!(verify(&a, &b).reason, MatchReason::YearConflict);
        let c = rec("Editorial", &["Ann Smith"], Some(2001));
        assert_eq!(verify(&c, &c.clone()).status, MatchStatus::Ambiguous);
        let d = rec("Totally Different", &["Ann Smith", "Bo Doe"], Some(2001));
        assert_eq!(verify(&a, &d).status, MatchStatus::Different);
    }

    #[test]
    fn versioned_doi() {
        let mut a = rec("Dataset A", &[], None);
        let mut b = a.clone();
        a.ext_ids.doi = Some("10.5281/zenodo.1.v1".into());
        b.ext_ids.doi = Some("10.5281/zenodo.1.v2".into());
        assert_eq!(verify(&a, &b).reason, MatchReason::VersionedDoi);
    }

    fn arb_record() -> impl Strategy<Value = ReleaseRecord> {
        let title = prop::sample::select(vec!["Graph Rewriting", "graph rewriting!", "Editorial", "Other Things", "Tiny"]);
        let name = prop::sample::select(vec!["Ann Smith", "Smith, A.", "Bo Doe", "Cy Lee", "J.", "Ó Brien"]);
        let doi = prop::option::of(prop::sample::select(vec!["10.1000/a", "10.1000/a.v2", "10.1000/b"]));
        let arxiv = prop::option::of(prop::sample::select(vec!["2101.00001v1", "2101.00001v2", "2101.00002"]));
        let pmid = prop::option::of(prop::sample::select(vec!["1", "2"]));
        let related = prop::collection::vec(prop::sample::select(vec!["10.1000/a", "10.1000/b"]), 0..2);
        (
            prop::option::of(title),
            prop::collection::vec(name, 0..4),
            prop::option::of(1995i32..2005),
            doi,
            arxiv,
            pmid,
            related,
        )
            .prop_map(|(title, authors, year, doi, arxiv, pmid, related)| {
                let mut r = ReleaseRecord {
                    ident: "r".into(),
                    title: title.map(String::from),
                    authors: authors.into_iter().map(String::from).collect(),
                    year,
                    related_dois: related.into_iter().map(String::from).collect(),
                    ..Default::default()
                };
                r.ext_ids.doi = doi.map(String::from);
                r.ext_ids.arxiv = arxiv.map(String::from);
                r.ext_ids.pmid = pmid.map(String::from);
                r
            })
    }

    proptest! {
        #[test]
        fn verify_is_symmetric(a in arb_record(), b in arb_record()) {
            prop_assert_eq!(verify(&a, &b), verify(&b, &a));
        }

        #[test]
        fn self_match_never_different(a in arb_record()) {
            let r = verify(&a, &a);
            if a.title.as_deref().and_then(slugify_title).is_some() {
                prop_assert!(r.status != MatchStatus::Different, "{:?}", r);
            }
        }
    }
}

//! Identifier joins between references and releases.
//!
//! Both sides are mapped to `scheme:value<TAB>side<TAB>payload` lines, sorted
//! externally, and every group sharing an identifier key yields one exact
//! edge per (reference, release) pair.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fuse::{BiblioRef, EdgeStatus};
use crate::fuzzy::MatchReason;
use crate::ingest::{RawReference, ReleaseRecord};
use crate::mapreduce::{line_fields, par_group_reduce, par_map_to_tsv, ExternalSorter, GroupOptions, SortSpec, TsvRow};
use crate::normalize::{normalize_arxiv, Scheme};

/// Groups larger than this are skipped as hot keys.
pub const DEFAULT_GROUP_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Ref,
    Release,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Ref => "ref",
            Side::Release => "release",
        }
    }

    pub fn parse(s: &str) -> Option<Side> {
        match s {
            "ref" => Some(Side::Ref),
            "release" => Some(Side::Release),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyedDoc {
    pub key: String,
    pub side: Side,
    pub payload: String,
}

impl KeyedDoc {
    pub fn to_row(&self) -> TsvRow {
        TsvRow::new(self.key.clone()).field(self.side.as_str()).field(self.payload.clone())
    }

    pub fn from_line(line: &[u8]) -> std::result::Result<KeyedDoc, String> {
        let fields = line_fields(line);
        let [key, side, payload] = <[String; 3]>::try_from(fields).map_err(|f| format!("expected 3 columns, found {}", f.len()))?;
        let side = Side::parse(&side).ok_or_else(|| format!("unknown side {side:?}"))?;
        Ok(KeyedDoc { key, side, payload })
    }
}

pub fn scheme_reason(scheme: Scheme) -> MatchReason {
    match scheme {
        Scheme::Doi => MatchReason::Doi,
        Scheme::Pmid => MatchReason::Pmid,
        Scheme::Pmcid => MatchReason::Pmcid,
        Scheme::Arxiv => MatchReason::Arxiv,
        Scheme::Isbn13 => MatchReason::Isbn,
    }
}

fn key_scheme(key: &str) -> Option<Scheme> {
    let prefix = key.split_once(':')?.0;
    Scheme::ALL.into_iter().find(|s| s.as_str() == prefix)
}

/// Join keys for already-canonical identifiers. arXiv keys drop the version
/// so any version of a preprint joins.
fn id_keys(ids: [(Scheme, Option<&str>); 5]) -> BTreeSet<String> {
    ids.into_iter()
        .filter_map(|(scheme, v)| {
            let v = v?;
            let value = match scheme {
                Scheme::Arxiv => normalize_arxiv(v)?.value,
                _ => v.to_string(),
            };
            Some(format!("{}:{}", scheme.as_str(), value))
        })
        .collect()
}

pub fn ref_id_keys(r: &RawReference) -> BTreeSet<String> {
    let b = &r.biblio;
    id_keys([
        (Scheme::Doi, b.doi.as_deref()),
        (Scheme::Pmid, b.pmid.as_deref()),
        (Scheme::Pmcid, b.pmcid.as_deref()),
        (Scheme::Arxiv, b.arxiv.as_deref()),
        (Scheme::Isbn13, b.isbn.as_deref()),
    ])
}

pub fn release_id_keys(r: &ReleaseRecord) -> BTreeSet<String> {
    let x = &r.ext_ids;
    id_keys([
        (Scheme::Doi, x.doi.as_deref()),
        (Scheme::Pmid, x.pmid.as_deref()),
        (Scheme::Pmcid, x.pmcid.as_deref()),
        (Scheme::Arxiv, x.arxiv.as_deref()),
        (Scheme::Isbn13, x.isbn13.as_deref()),
    ])
}

pub fn extract_ref_keys(r: &RawReference) -> Vec<KeyedDoc> {
    let keys = ref_id_keys(r);
    if keys.is_empty() {
        return vec![];
    }
    let payload = serde_json::to_string(r).expect("serializable");
    keys.into_iter().map(|key| KeyedDoc { key, side: Side::Ref, payload: payload.clone() }).collect()
}

/// Release payloads carry only what an exact edge needs.
pub fn extract_release_keys(r: &ReleaseRecord) -> Vec<KeyedDoc> {
    let keys = release_id_keys(r);
    if keys.is_empty() {
        return vec![];
    }
    let stub = ReleaseRecord { ident: r.ident.clone(), year: r.year, release_stage: r.release_stage, ..Default::default() };
    let payload = serde_json::to_string(&stub).expect("serializable");
    keys.into_iter().map(|key| KeyedDoc { key, side: Side::Release, payload: payload.clone() }).collect()
}

#[derive(Debug, Default)]
pub struct ExactJoin {
    pub edges: Vec<BiblioRef>,
    pub self_citations: u64,
    /// More than one distinct release carries this identifier.
    pub ambiguous: bool,
}

pub fn join_exact(key: &str, docs: &[KeyedDoc]) -> std::result::Result<ExactJoin, String> {
    let reason = key_scheme(key).map(scheme_reason).ok_or_else(|| format!("key without scheme: {key:?}"))?;
    let mut refs = Vec::new();
    let mut releases: Vec<ReleaseRecord> = Vec::new();
    for d in docs {
        match d.side {
            Side::Ref => refs.push(serde_json::from_str::<RawReference>(&d.payload).map_err(|e| e.to_string())?),
            Side::Release => releases.push(serde_json::from_str(&d.payload).map_err(|e| e.to_string())?),
        }
    }
    releases.sort_by(|a, b| a.ident.cmp(&b.ident));
    releases.dedup_by(|a, b| a.ident == b.ident);
    let mut out = ExactJoin { ambiguous: releases.len() > 1, ..Default::default() };
    for r in &refs {
        for rel in &releases {
            if rel.ident == r.source_ident {
                out.self_citations += 1;
                continue;
            }
            out.edges.push(BiblioRef::matched(r, rel, EdgeStatus::Exact, reason));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExactStats {
    pub refs: u64,
    pub refs_without_ids: u64,
    pub ref_keys: u64,
    pub release_keys: u64,
    pub edges: u64,
    pub self_citations: u64,
    pub ambiguous_keys: u64,
    pub groups: u64,
    pub hot_keys: u64,
    pub failed_groups: u64,
}

/// Full exact stage. References without any identifier go to `unkeyed`.
pub fn exact_stage<RI, LI, S, U>(
    refs: RI,
    releases: LI,
    spec: &SortSpec,
    cap: usize,
    mut sink: S,
    unkeyed: U,
) -> Result<ExactStats>
where
    RI: IntoIterator<Item = RawReference>,
    LI: IntoIterator<Item = ReleaseRecord>,
    S: FnMut(BiblioRef) -> Result<()>,
    U: FnMut(RawReference),
{
    let par = spec.parallelism;
    let mut sorter = ExternalSorter::new(spec.clone())?;
    let rows = |docs: Vec<KeyedDoc>| docs.iter().map(KeyedDoc::to_row).collect::<Vec<_>>();
    let ref_stats = par_map_to_tsv(refs, par, |r| rows(extract_ref_keys(r)), &mut sorter, unkeyed)?;
    let rel_stats = par_map_to_tsv(releases, par, |r| rows(extract_release_keys(r)), &mut sorter, |_| {})?;
    let mut stats = ExactStats {
        refs: ref_stats.records,
        refs_without_ids: ref_stats.skipped,
        ref_keys: ref_stats.lines,
        release_keys: rel_stats.lines,
        ..Default::default()
    };
    let sorted = sorter.finish()?;
    let opts = GroupOptions::default().with_cap(cap).with_parallelism(par);
    let g = par_group_reduce(
        sorted,
        opts,
        |key, lines| {
            let key = std::str::from_utf8(key).map_err(|e| e.to_string())?;
            let docs = lines.iter().map(|l| KeyedDoc::from_line(l)).collect::<std::result::Result<Vec<_>, _>>()?;
            join_exact(key, &docs)
        },
        |j| {
            stats.self_citations += j.self_citations;
            stats.ambiguous_keys += u64::from(j.ambiguous);
            for e in j.edges {
                stats.edges += 1;
                sink(e)?;
            }
            Ok(())
        },
    )?;
    stats.groups = g.groups;
    stats.hot_keys = g.hot_keys;
    stats.failed_groups = g.failed;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_raw_reference, parse_release};

    fn stage(refs: &[&str], releases: &[&str]) -> (Vec<BiblioRef>, ExactStats, Vec<RawReference>) {
        let dir = tempfile::tempdir().unwrap();
        let spec = SortSpec::new(dir.path());
        let refs: Vec<_> = refs.iter().map(|l| parse_raw_reference(l).unwrap()).collect();
        let rels: Vec<_> = releases.iter().map(|l| parse_release(l).unwrap()).collect();
        let mut edges = Vec::new();
        let mut side = Vec::new();
        let stats = exact_stage(
            refs,
            rels,
            &spec,
            DEFAULT_GROUP_CAP,
            |e| {
                edges.push(e);
                Ok(())
            },
            |r| side.push(r),
        )
        .unwrap();
        (edges, stats, side)
    }

    #[test]
    fn doi_join() {
        let (edges, stats, _) = stage(
            &[r#"{"source_ident":"w1","index":0,"biblio":{"doi":"10.1000/X"}}"#],
            &[r#"{"ident":"w9","ext_ids":{"doi":"10.1000/x"}}"#],
        );
        assert_eq!(edges.len(), 1);
        let e = &edges[0];
        assert_eq!((e.source_ident.as_str(), e.target_ident.as_deref()), ("w1", Some("w9")));
        assert_eq!((e.match_status, e.match_reason), (EdgeStatus::Exact, MatchReason::Doi));
        assert_eq!(stats.ambiguous_keys, 0);
    }

    #[test]
    fn two_schemes_two_candidates() {
        let (edges, _, _) = stage(
            &[r#"{"source_ident":"w1","index":0,"biblio":{"doi":"10.1000/x","pmid":"123"}}"#],
            &[r#"{"ident":"w9","ext_ids":{"doi":"10.1000/x","pmid":"123"}}"#],
        );
        let mut reasons: Vec<_> = edges.iter().map(|e| e.match_reason).collect();
        reasons.sort();
        assert_eq!(reasons, vec![MatchReason::Doi, MatchReason::Pmid]);
    }

    #[test]
    fn self_citation_and_absent_key() {
        let (edges, stats, side) = stage(
            &[
                r#"{"source_ident":"w9","index":0,"biblio":{"doi":"10.1000/x"}}"#,
                r#"{"source_ident":"w1","index":1,"biblio":{"doi":"10.2000/y"}}"#,
                r#"{"source_ident":"w1","index":2,"biblio":{"title":"No ids here"}}"#,
            ],
            &[r#"{"ident":"w9","ext_ids":{"doi":"10.1000/x"}}"#],
        );
        assert!(edges.is_empty());
        assert_eq!(stats.self_citations, 1);
        assert_eq!(stats.refs_without_ids, 1);
        assert_eq!(side[0].ref_index, 2);
    }

    #[test]
    fn ambiguous_identifier_emits_all() {
        let (edges, stats, _) = stage(
            &[r#"{"source_ident":"w1","index":0,"biblio":{"isbn":"978-0-306-40615-7"}}"#],
            &[
                r#"{"ident":"b2","ext_ids":{"isbn13":"9780306406157"}}"#,
                r#"{"ident":"b1","ext_ids":{"isbn":"0-306-40615-2"}}"#,
            ],
        );
        let targets: Vec<_> = edges.iter().map(|e| e.target_ident.clone().unwrap()).collect();
        assert_eq!(targets, vec!["b1", "b2"]);
        assert_eq!(stats.ambiguous_keys, 1);
    }

    #[test]
    fn arxiv_versions_join() {
        let (edges, _, _) = stage(
            &[r#"{"source_ident":"w1","index":0,"biblio":{"arxiv":"arXiv:2101.00001v1"}}"#],
            &[r#"{"ident":"w9","ext_ids":{"arxiv":"2101.00001v3"}}"#],
        );
        assert_eq!(edges.len(), 1);
        assert_eq!(edges[0].match_reason, MatchReason::Arxiv);
    }

    #[test]
    fn keyed_doc_round_trip() {
        let d = KeyedDoc { key: "doi:10.1000/x".into(), side: Side::Ref, payload: "{\"a\":\"t\\tb\"}".into() };
        assert_eq!(KeyedDoc::from_line(&d.to_row().to_line()).unwrap(), d);
    }
}

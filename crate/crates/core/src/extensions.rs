//! Edge types beyond catalog-to-catalog references: Wikipedia articles citing
//! catalog works, references resolving to Open Library editions, DOI-to-DOI
//! pairs and plain URL targets. All of them reuse the exact, fuzzy and fuse
//! stages unchanged.

use std::cell::Cell;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::exactmatch::{exact_stage, ExactStats, DEFAULT_GROUP_CAP};
use crate::fuse::{fuse_stage, BiblioRef, FuseStats};
use crate::fuzzy::{fuzzy_stage, FuzzyStats, VerifyConfig};
use crate::ingest::{RawReference, ReleaseRecord, WikipediaRow};
use crate::jsonl::{read_jsonl, with_shunt, JsonlWriter};
use crate::mapreduce::{dict_join, ExternalSorter, JoinStats, LineSink, SortSpec};

pub const WIKIPEDIA_PROVENANCE: &str = "wikipedia";
pub const WIKIPEDIA_PREFIX: &str = "wikipedia:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeType {
    DoiDoi,
    TargetOpenLibrary,
    SourceWikipedia,
    TargetUrl,
}

impl EdgeType {
    pub const ALL: [EdgeType; 4] = [EdgeType::DoiDoi, EdgeType::TargetOpenLibrary, EdgeType::SourceWikipedia, EdgeType::TargetUrl];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::DoiDoi => "doi-doi",
            EdgeType::TargetOpenLibrary => "target-open-library",
            EdgeType::SourceWikipedia => "source-wikipedia",
            EdgeType::TargetUrl => "target-url",
        }
    }

    pub fn parse(s: &str) -> Option<EdgeType> {
        EdgeType::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

/// An edge outside the catalog graph. Matched edges carry the fused record
/// they came from; URL edges have none.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypedEdge {
    pub edge_type: EdgeType,
    pub source: String,
    pub target: String,
    #[serde(flatten, skip_serializing_if = "Option::is_none", default)]
    pub bref: Option<BiblioRef>,
}

#[derive(Debug, Clone)]
pub struct LinkOptions {
    pub cap: usize,
    pub verify: VerifyConfig,
}

impl Default for LinkOptions {
    fn default() -> Self {
        LinkOptions { cap: DEFAULT_GROUP_CAP, verify: VerifyConfig::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub exact: ExactStats,
    pub fuzzy: FuzzyStats,
    pub fuse: FuseStats,
}

/// Exact stage, then fuzzy over the references without identifiers, then
/// fusion. `refs` and `releases` are re-opened per pass and must yield the
/// same records each time. `sink` sees one record per reference, sorted by
/// edge key.
pub fn link_references<RF, RI, LF, LI, S>(
    mut refs: RF,
    mut releases: LF,
    spec: &SortSpec,
    opts: &LinkOptions,
    mut sink: S,
) -> Result<LinkStats>
where
    RF: FnMut() -> Result<RI>,
    RI: IntoIterator<Item = RawReference>,
    LF: FnMut() -> Result<LI>,
    LI: IntoIterator<Item = ReleaseRecord>,
    S: FnMut(BiblioRef) -> Result<()>,
{
    std::fs::create_dir_all(&spec.tmp_dir)?;
    let tmp = tempfile::Builder::new().prefix("link-").tempdir_in(&spec.tmp_dir)?;
    let cand_path = tmp.path().join("candidates.json.zst");
    let unkeyed_path = tmp.path().join("unkeyed.json.zst");

    let mut candidates = JsonlWriter::create(&cand_path, Codec::Zstd)?;
    let mut unkeyed = JsonlWriter::create(&unkeyed_path, Codec::Zstd)?;
    let mut side_err = None;
    let exact = exact_stage(refs()?, releases()?, spec, opts.cap, |b| candidates.write(&b), |r| {
        if side_err.is_none() {
            side_err = unkeyed.write(&r).err();
        }
    })?;
    if let Some(e) = side_err {
        return Err(e);
    }
    unkeyed.finish()?;

    let fuzzy = with_shunt(read_jsonl::<RawReference>(&unkeyed_path)?, |it| {
        fuzzy_stage(it, releases()?, spec, opts.cap, &opts.verify, |b| candidates.write(&b))
    })?;
    candidates.finish()?;

    let fuse = with_shunt(read_jsonl::<BiblioRef>(&cand_path)?, |it| fuse_stage(refs()?, it, spec, &mut sink))?;
    Ok(LinkStats { exact, fuzzy, fuse })
}

/// Wikipedia citations as references. The article title is the source and
/// each article numbers its citations in order of appearance. Rows with
/// neither a title nor an identifier can never match and are dropped.
pub fn wikipedia_refs<I>(rows: I, skipped: &Cell<u64>) -> impl Iterator<Item = RawReference> + '_
where
    I: IntoIterator<Item = WikipediaRow>,
    I::IntoIter: 'static,
{
    skipped.set(0);
    let mut seen: HashMap<String, u32> = HashMap::new();
    rows.into_iter().filter_map(move |row| {
        let pos = seen.entry(row.article_title.clone()).or_insert(0);
        let ref_index = *pos;
        *pos += 1;
        let b = &row.cited;
        let usable = b.title.as_deref().is_some_and(|t| !t.trim().is_empty())
            || b.doi.is_some()
            || b.pmid.is_some()
            || b.pmcid.is_some()
            || b.arxiv.is_some()
            || b.isbn.is_some();
        if !usable {
            skipped.set(skipped.get() + 1);
            return None;
        }
        Some(RawReference {
            source_ident: row.article_title,
            ref_index,
            provenance: WIKIPEDIA_PROVENANCE.to_string(),
            biblio: row.cited,
            source_year: None,
            source_release_stage: None,
        })
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WikipediaStats {
    pub rows: u64,
    pub skipped: u64,
    pub edges: u64,
    pub link: LinkStats,
}

pub fn match_wikipedia<WF, WI, LF, LI, S>(
    mut rows: WF,
    releases: LF,
    spec: &SortSpec,
    opts: &LinkOptions,
    mut sink: S,
) -> Result<WikipediaStats>
where
    WF: FnMut() -> Result<WI>,
    WI: IntoIterator<Item = WikipediaRow>,
    WI::IntoIter: 'static,
    LF: FnMut() -> Result<LI>,
    LI: IntoIterator<Item = ReleaseRecord>,
    S: FnMut(TypedEdge) -> Result<()>,
{
    let skipped = Cell::new(0);
    let mut edges = 0;
    let link = link_references(
        || Ok(wikipedia_refs(rows()?, &skipped)),
        releases,
        spec,
        opts,
        |b| {
            let Some(target) = b.target_ident.clone() else { return Ok(()) };
            edges += 1;
            sink(TypedEdge {
                edge_type: EdgeType::SourceWikipedia,
                source: format!("{WIKIPEDIA_PREFIX}{}", b.source_ident),
                target,
                bref: Some(b),
            })
        },
    )?;
    Ok(WikipediaStats { rows: link.fuse.refs + skipped.get(), skipped: skipped.get(), edges, link })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OpenLibraryStats {
    pub edges: u64,
    /// Distinct (source, work) pairs once editions collapse to their work.
    pub work_edges: u64,
    /// Matched editions that name no work.
    pub editions_without_work: u64,
    pub link: LinkStats,
}

/// References matched against Open Library editions. Edges target the
/// edition; the per-work count collapses editions of the same work.
pub fn match_openlibrary<RF, RI, EF, EI, S>(
    refs: RF,
    mut editions: EF,
    spec: &SortSpec,
    opts: &LinkOptions,
    mut sink: S,
) -> Result<OpenLibraryStats>
where
    RF: FnMut() -> Result<RI>,
    RI: IntoIterator<Item = RawReference>,
    EF: FnMut() -> Result<EI>,
    EI: IntoIterator<Item = ReleaseRecord>,
    S: FnMut(TypedEdge) -> Result<()>,
{
    std::fs::create_dir_all(&spec.tmp_dir)?;
    let tmp = tempfile::Builder::new().prefix("openlibrary-").tempdir_in(&spec.tmp_dir)?;
    let pairs_path = tmp.path().join("pairs.json.zst");
    let mut pairs = JsonlWriter::create(&pairs_path, Codec::Zstd)?;
    let mut edges = 0;
    let link = link_references(refs, &mut editions, spec, opts, |b| {
        let Some(target) = b.target_ident.clone() else { return Ok(()) };
        edges += 1;
        pairs.write(&(&target, &b.source_ident))?;
        sink(TypedEdge { edge_type: EdgeType::TargetOpenLibrary, source: b.source_ident.clone(), target, bref: Some(b) })
    })?;
    pairs.finish()?;

    let mut collapsed = ExternalSorter::new(spec.clone())?;
    let dict = editions()?.into_iter().filter_map(|e| e.ext_ids.openlibrary.map(|w| (e.ident, w)));
    let join = with_shunt(read_jsonl::<(String, String)>(&pairs_path)?, |probes| {
        dict_join(dict, probes, spec, |work, source| collapsed.push_line(format!("{}\t{work}", escape(source)).as_bytes()))
    })?;
    let work_edges = count_distinct(collapsed)?;
    Ok(OpenLibraryStats { edges, work_edges, editions_without_work: join.missing, link })
}

fn escape(s: &str) -> std::borrow::Cow<'_, str> {
    crate::mapreduce::escape_field(s)
}

fn count_distinct(sorter: ExternalSorter) -> Result<u64> {
    let mut prev: Option<Vec<u8>> = None;
    let mut n = 0;
    for line in sorter.finish()? {
        let line = line?;
        if prev.as_ref() != Some(&line) {
            n += 1;
            prev = Some(line);
        }
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoiEdgeStats {
    pub matched: u64,
    /// Distinct DOI pairs written.
    pub edges: u64,
    pub citing_without_doi: u64,
    pub cited_without_doi: u64,
}

/// Projects matched catalog edges onto DOI pairs. Both endpoints need a DOI;
/// the output is sorted and duplicate-free.
pub fn doi_edges<BI, LF, LI, S>(brefs: BI, mut releases: LF, spec: &SortSpec, mut sink: S) -> Result<DoiEdgeStats>
where
    BI: IntoIterator<Item = BiblioRef>,
    LF: FnMut() -> Result<LI>,
    LI: IntoIterator<Item = ReleaseRecord>,
    S: FnMut(&str, &str) -> Result<()>,
{
    std::fs::create_dir_all(&spec.tmp_dir)?;
    let tmp = tempfile::Builder::new().prefix("doi-edges-").tempdir_in(&spec.tmp_dir)?;
    let half_path = tmp.path().join("citing.json.zst");
    let dois = |rs: LI| rs.into_iter().filter_map(|r| r.ext_ids.doi.map(|d| (r.ident, d)));

    let mut matched = 0u64;
    let probes = brefs.into_iter().filter_map(|b| {
        let target = b.target_ident?;
        matched += 1;
        Some((b.source_ident, target))
    });
    let mut half = JsonlWriter::create(&half_path, Codec::Zstd)?;
    let first: JoinStats = dict_join(dois(releases()?), probes, spec, |citing, target| half.write(&(target, citing)))?;
    half.finish()?;

    let mut pairs = ExternalSorter::new(spec.clone())?;
    let second = with_shunt(read_jsonl::<(String, String)>(&half_path)?, |probes| {
        dict_join(dois(releases()?), probes, spec, |cited, citing| {
            pairs.push_line(format!("{}\t{}", escape(citing), escape(cited)).as_bytes())
        })
    })?;

    let mut edges = 0;
    let mut prev: Option<Vec<u8>> = None;
    for line in pairs.finish()? {
        let line = line?;
        if prev.as_ref() == Some(&line) {
            continue;
        }
        let fields = crate::mapreduce::line_fields(&line);
        let [citing, cited] = fields.as_slice() else {
            return Err(Error::Inconsistent("doi pair line".into()));
        };
        sink(citing, cited)?;
        edges += 1;
        prev = Some(line);
    }
    Ok(DoiEdgeStats { matched, edges, citing_without_doi: first.missing, cited_without_doi: second.missing })
}

/// Edge counts by type, as laid out in the summary table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeTypeReport {
    pub counts: BTreeMap<EdgeType, u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub openlibrary_works: Option<u64>,
}

pub const EDGE_TYPES_HEADER: &str = "edge_type\tcount";

impl EdgeTypeReport {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{EDGE_TYPES_HEADER}")?;
        for t in EdgeType::ALL {
            if let Some(n) = self.counts.get(&t) {
                writeln!(out, "{t}\t{n}")?;
            }
        }
        if let Some(w) = self.openlibrary_works {
            writeln!(out, "target-open-library-works\t{w}")?;
        }
        writeln!(out, "total\t{}", self.total())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuse::EdgeStatus;
    use crate::ingest::{parse_edition, parse_raw_reference, parse_release, parse_wikipedia_row, ExtIds};

    fn release(ident: &str, doi: Option<&str>, title: &str) -> ReleaseRecord {
        ReleaseRecord {
            ident: ident.into(),
            title: Some(title.into()),
            authors: vec!["Ann Smith".into()],
            year: Some(2001),
            ext_ids: ExtIds { doi: doi.map(String::from), ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn typed_edge_serializes_flat() {
        let r = parse_raw_reference(r#"{"source_ident":"Foo","biblio":{"doi":"10.1234/x"}}"#).unwrap();
        let b = BiblioRef::matched(&r, &release("t", Some("10.1234/x"), "T"), EdgeStatus::Exact, crate::fuzzy::MatchReason::Doi);
        let e = TypedEdge { edge_type: EdgeType::SourceWikipedia, source: "wikipedia:Foo".into(), target: "t".into(), bref: Some(b) };
        let v: serde_json::Value = serde_json::to_value(&e).unwrap();
        assert_eq!(v["edge_type"], "source-wikipedia");
        assert_eq!(v["match_reason"], "doi");
        let back: TypedEdge = serde_json::from_value(v).unwrap();
        assert_eq!(back, e);
        let url = TypedEdge { edge_type: EdgeType::TargetUrl, source: "s".into(), target: "http://a.org/".into(), bref: None };
        let back: TypedEdge = serde_json::from_str(&serde_json::to_string(&url).unwrap()).unwrap();
        assert_eq!(back, url);
    }

    #[test]
    fn wikipedia_rows_link_to_catalog() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SortSpec::new(dir.path());
        let releases = vec![
            release("r1", Some("10.1234/a"), "Alpha Particles In Motion"),
            release("r2", None, "Studies Of Beta Decay Rates"),
        ];
        let rows: Vec<WikipediaRow> = [
            r#"{"article_title":"Physics","cited":{"doi":"10.1234/A"}}"#,
            r#"{"article_title":"Physics","cited":{"title":"Studies of beta decay rates","authors":["Ann Smith"],"year":2001}}"#,
            r#"{"article_title":"Physics","cited":{"url":"http://x.org"}}"#,
            r#"{"article_title":"Chemistry","cited":{"title":"Nothing Like It At All"}}"#,
        ]
        .iter()
        .map(|l| parse_wikipedia_row(l).unwrap())
        .collect();
        let mut out = Vec::new();
        let stats = match_wikipedia(|| Ok(rows.clone()), || Ok(releases.clone()), &spec, &LinkOptions::default(), |e| {
            out.push(e);
            Ok(())
        })
        .unwrap();
        assert_eq!((stats.rows, stats.skipped, stats.edges), (4, 1, 2));
        let got: Vec<_> = out.iter().map(|e| (e.source.as_str(), e.target.as_str())).collect();
        assert_eq!(got, vec![("wikipedia:Physics", "r1"), ("wikipedia:Physics", "r2")]);
        let b = out[1].bref.as_ref().unwrap();
        assert_eq!((b.ref_index, b.provenance.as_str()), (1, "wikipedia"));
    }

    #[test]
    fn openlibrary_collapses_editions_per_work() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SortSpec::new(dir.path());
        let editions: Vec<ReleaseRecord> = [
            r#"{"key":"/books/OL1M","works":[{"key":"/works/OL9W"}],"isbn_13":["9780306406157"],"title":"Book One"}"#,
            r#"{"key":"/books/OL2M","works":[{"key":"/works/OL9W"}],"isbn_13":["9781861972712"],"title":"Book One Again"}"#,
            r#"{"key":"/books/OL3M","isbn_13":["9780131103627"],"title":"Orphan"}"#,
        ]
        .iter()
        .map(|l| parse_edition(l).unwrap())
        .collect();
        let refs: Vec<RawReference> = [
            r#"{"source_ident":"s1","index":0,"biblio":{"isbn":"978-0-306-40615-7"}}"#,
            r#"{"source_ident":"s1","index":1,"biblio":{"isbn":"9781861972712"}}"#,
            r#"{"source_ident":"s2","index":0,"biblio":{"isbn":"9780131103627"}}"#,
            r#"{"source_ident":"s2","index":1,"biblio":{"isbn":"9780000000002"}}"#,
        ]
        .iter()
        .map(|l| parse_raw_reference(l).unwrap())
        .collect();
        let mut out = Vec::new();
        let stats = match_openlibrary(|| Ok(refs.clone()), || Ok(editions.clone()), &spec, &LinkOptions::default(), |e| {
            out.push(e.target);
            Ok(())
        })
        .unwrap();
        assert_eq!(out, vec!["OL1M", "OL2M", "OL3M"]);
        assert_eq!((stats.edges, stats.work_edges, stats.editions_without_work), (3, 1, 1));
    }

    #[test]
    fn doi_pairs_need_both_dois() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SortSpec::new(dir.path());
        let releases: Vec<ReleaseRecord> = [
            r#"{"ident":"a","title":"A","ext_ids":{"doi":"10.1234/a"}}"#,
            r#"{"ident":"b","title":"B","ext_ids":{"doi":"10.1234/b"}}"#,
            r#"{"ident":"c","title":"C"}"#,
        ]
        .iter()
        .map(|l| parse_release(l).unwrap())
        .collect();
        let by_ident: HashMap<_, _> = releases.iter().map(|r| (r.ident.clone(), r.clone())).collect();
        let edge = |src: &str, idx: u32, tgt: Option<&str>| {
            let r = RawReference {
                source_ident: src.into(),
                ref_index: idx,
                provenance: "crossref".into(),
                biblio: Default::default(),
                source_year: None,
                source_release_stage: None,
            };
            match tgt {
                Some(t) => BiblioRef::matched(&r, &by_ident[t], EdgeStatus::Exact, crate::fuzzy::MatchReason::Doi),
                None => BiblioRef::unmatched(&r),
            }
        };
        let brefs = vec![
            edge("a", 0, Some("b")),
            edge("a", 1, Some("b")),
            edge("b", 0, Some("a")),
            edge("a", 2, Some("c")),
            edge("c", 0, Some("a")),
            edge("b", 1, None),
        ];
        let mut out = Vec::new();
        let stats = doi_edges(brefs, || Ok(releases.clone()), &spec, |a, b| {
            out.push((a.to_string(), b.to_string()));
            Ok(())
        })
        .unwrap();
        let want: Vec<(String, String)> = vec![("10.1234/a".into(), "10.1234/b".into()), ("10.1234/b".into(), "10.1234/a".into())];
        assert_eq!(out, want);
        assert_eq!(stats, DoiEdgeStats { matched: 5, edges: 2, citing_without_doi: 1, cited_without_doi: 1 });
    }

    #[test]
    fn report_total() {
        let mut r = EdgeTypeReport::default();
        r.counts.insert(EdgeType::DoiDoi, 10);
        r.counts.insert(EdgeType::TargetUrl, 5);
        r.openlibrary_works = Some(0);
        let mut out = Vec::new();
        r.write_tsv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "edge_type\tcount\ndoi-doi\t10\ntarget-url\t5\ntarget-open-library-works\t0\ntotal\t15\n");
    }
}

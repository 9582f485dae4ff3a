//! The citation graph as a task graph.
//!
//! ```text
//! refs_enriched, releases_enriched      parsed and normalized inputs
//! exact_edges, fuzzy_edges              match candidates
//! brefs                                 one fused record per reference
//! match_stats, doi_edges, url_edges     derived tables
//! wikipedia_edges, openlibrary_edges    only when those inputs are set
//! edge_types                            counts per edge type
//! all                                   manifest of every final artifact
//! ```
//!
//! The Wikipedia and Open Library branches exist only when their inputs are
//! configured.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::codec::{self, Codec};
use crate::error::{Error, Result};
use crate::exactmatch::exact_stage;
use crate::extensions::{self, EdgeType, EdgeTypeReport, LinkOptions, TypedEdge};
use crate::fuse::{fuse_stage, write_match_stats, BiblioRef, MatchStatsCounter};
use crate::fuzzy::fuzzy_stage;
use crate::ingest::{self, for_each_record, IngestStats, RawReference, RefParser, ReleaseRecord, WikipediaRow};
use crate::jsonl::{ErrorSlot, JsonlWriter};
use crate::mapreduce::{line_fields, sorted_distinct, SortSpec, TsvRow};
use crate::weblinks::extract_clean_urls;

use super::config::Config;
use super::{Graph, TaskCtx, TaskMetrics, TaskSpec};

pub const REFS_ENRICHED: &str = "refs_enriched";
pub const RELEASES_ENRICHED: &str = "releases_enriched";
pub const WIKIPEDIA_ENRICHED: &str = "wikipedia_enriched";
pub const EDITIONS_ENRICHED: &str = "editions_enriched";
pub const EXACT_EDGES: &str = "exact_edges";
pub const FUZZY_EDGES: &str = "fuzzy_edges";
pub const BREFS: &str = "brefs";
pub const MATCH_STATS: &str = "match_stats";
pub const DOI_EDGES: &str = "doi_edges";
pub const URL_EDGES: &str = "url_edges";
pub const WIKIPEDIA_EDGES: &str = "wikipedia_edges";
pub const OPENLIBRARY_EDGES: &str = "openlibrary_edges";
pub const EDGE_TYPES: &str = "edge_types";
pub const ALL: &str = "all";

/// Bumped whenever a task's output format or semantics change.
const SALT: &str = concat!("refgraph-", env!("CARGO_PKG_VERSION"), "/1");

struct Env {
    spec: SortSpec,
    codec: Codec,
    link: LinkOptions,
}

pub fn build_graph(cfg: &Config) -> Graph {
    let mut g = Graph::new(&cfg.workdir, cfg.tmp_dir(), SALT);
    let env = std::sync::Arc::new(Env {
        spec: cfg.sort_spec(),
        codec: cfg.codec,
        link: LinkOptions { cap: cfg.matching.group_cap, verify: cfg.matching.verify_config() },
    });
    let jsonl = format!("json{}", cfg.codec.extension());
    let csv = format!("csv{}", cfg.codec.extension());
    let m = &cfg.matching;
    let verify_params = |s: TaskSpec| {
        let stop: Vec<_> = env.link.verify.stoplist.iter().cloned().collect();
        s.param("group_cap", m.group_cap)
            .param("jaccard_strong", m.jaccard_strong)
            .param("jaccard_weak", m.jaccard_weak)
            .param("max_year_delta", m.max_year_delta)
            .param("stoplist", stop.join(","))
    };

    let e = env.clone();
    g.register(TaskSpec::new(REFS_ENRICHED, &jsonl).input(&cfg.inputs.refs), move |ctx| {
        let mut parser = RefParser::new();
        enrich(ctx, e.codec, |l| parser.parse(l))
    });
    let e = env.clone();
    g.register(TaskSpec::new(RELEASES_ENRICHED, &jsonl).input(&cfg.inputs.releases), move |ctx| {
        enrich(ctx, e.codec, ingest::parse_release)
    });

    let e = env.clone();
    g.register(TaskSpec::new(EXACT_EDGES, &jsonl).dep(REFS_ENRICHED).dep(RELEASES_ENRICHED).param("group_cap", m.group_cap), move |ctx| {
        let slot = ErrorSlot::new();
        let mut out = JsonlWriter::create(&ctx.output, e.codec)?;
        let stats = exact_stage(
            slot.stream::<RawReference>(ctx.dep(REFS_ENRICHED)?)?,
            slot.stream::<ReleaseRecord>(ctx.dep(RELEASES_ENRICHED)?)?,
            &e.spec,
            e.link.cap,
            |b| out.write(&b),
            |_| {},
        )?;
        slot.check()?;
        Ok(metrics(out.finish()?, &stats))
    });

    let e = env.clone();
    g.register(verify_params(TaskSpec::new(FUZZY_EDGES, &jsonl).dep(REFS_ENRICHED).dep(RELEASES_ENRICHED)), move |ctx| {
        let slot = ErrorSlot::new();
        let mut out = JsonlWriter::create(&ctx.output, e.codec)?;
        let stats = fuzzy_stage(
            slot.stream::<RawReference>(ctx.dep(REFS_ENRICHED)?)?,
            slot.stream::<ReleaseRecord>(ctx.dep(RELEASES_ENRICHED)?)?,
            &e.spec,
            e.link.cap,
            &e.link.verify,
            |b| out.write(&b),
        )?;
        slot.check()?;
        Ok(metrics(out.finish()?, &stats))
    });

    let e = env.clone();
    g.register(TaskSpec::new(BREFS, &jsonl).dep(REFS_ENRICHED).dep(EXACT_EDGES).dep(FUZZY_EDGES), move |ctx| {
        let slot = ErrorSlot::new();
        let mut out = JsonlWriter::create(&ctx.output, e.codec)?;
        let candidates = slot.stream::<BiblioRef>(ctx.dep(EXACT_EDGES)?)?.chain(slot.stream::<BiblioRef>(ctx.dep(FUZZY_EDGES)?)?);
        let stats = fuse_stage(slot.stream::<RawReference>(ctx.dep(REFS_ENRICHED)?)?, candidates, &e.spec, |b| out.write(&b))?;
        slot.check()?;
        Ok(metrics(out.finish()?, &stats))
    });

    g.register(TaskSpec::new(MATCH_STATS, "tsv").dep(BREFS), move |ctx| {
        let slot = ErrorSlot::new();
        let mut counter = MatchStatsCounter::default();
        for b in slot.stream::<BiblioRef>(ctx.dep(BREFS)?)? {
            counter.add(&b);
        }
        slot.check()?;
        let rows = counter.rows();
        let mut f = fs::File::create(&ctx.output)?;
        write_match_stats(&rows, &mut f)?;
        f.sync_all()?;
        Ok(TaskMetrics { records: rows.len() as u64, ..Default::default() })
    });

    let e = env.clone();
    g.register(TaskSpec::new(DOI_EDGES, &csv).dep(BREFS).dep(RELEASES_ENRICHED), move |ctx| {
        let slot = ErrorSlot::new();
        let mut w = csv::Writer::from_writer(codec::create(&ctx.output, e.codec)?);
        w.write_record(["citing", "cited"])?;
        let releases = ctx.dep(RELEASES_ENRICHED)?;
        let stats = extensions::doi_edges(slot.stream::<BiblioRef>(ctx.dep(BREFS)?)?, || slot.stream::<ReleaseRecord>(releases), &e.spec, |a, b| {
            w.write_record([a, b])?;
            Ok(())
        })?;
        slot.check()?;
        let enc = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        enc.finish()?;
        Ok(metrics(stats.edges, &stats))
    });

    let e = env.clone();
    g.register(TaskSpec::new(URL_EDGES, &jsonl).dep(REFS_ENRICHED), move |ctx| {
        let slot = ErrorSlot::new();
        let mut refs_with_urls = 0u64;
        let rows = slot.stream::<RawReference>(ctx.dep(REFS_ENRICHED)?)?.flat_map(|r| {
            let urls = extract_clean_urls(&r);
            refs_with_urls += u64::from(!urls.is_empty());
            urls.into_iter().map(move |u| TsvRow::new(r.source_ident.clone()).field(u).to_line()).collect::<Vec<_>>()
        });
        let mut out = JsonlWriter::create(&ctx.output, e.codec)?;
        let n = sorted_distinct(rows, &e.spec, |line| {
            let mut f = line_fields(line).into_iter();
            let (Some(source), Some(target)) = (f.next(), f.next()) else {
                return Err(Error::Inconsistent("url edge line".into()));
            };
            out.write(&TypedEdge { edge_type: EdgeType::TargetUrl, source, target, bref: None })
        })?;
        slot.check()?;
        out.finish()?;
        Ok(metrics(n, &serde_json::json!({ "refs_with_urls": refs_with_urls, "edges": n })))
    });

    let mut typed = vec![DOI_EDGES, URL_EDGES];

    if let Some(path) = &cfg.inputs.wikipedia {
        let e = env.clone();
        g.register(TaskSpec::new(WIKIPEDIA_ENRICHED, &jsonl).input(path), move |ctx| enrich(ctx, e.codec, ingest::parse_wikipedia_row));
        let e = env.clone();
        g.register(verify_params(TaskSpec::new(WIKIPEDIA_EDGES, &jsonl).dep(WIKIPEDIA_ENRICHED).dep(RELEASES_ENRICHED)), move |ctx| {
            let slot = ErrorSlot::new();
            let mut out = JsonlWriter::create(&ctx.output, e.codec)?;
            let (rows, releases) = (ctx.dep(WIKIPEDIA_ENRICHED)?, ctx.dep(RELEASES_ENRICHED)?);
            let stats = extensions::match_wikipedia(
                || slot.stream::<WikipediaRow>(rows),
                || slot.stream::<ReleaseRecord>(releases),
                &e.spec,
                &e.link,
                |t| out.write(&t),
            )?;
            slot.check()?;
            Ok(metrics(out.finish()?, &stats))
        });
        typed.push(WIKIPEDIA_EDGES);
    }

    if let Some(path) = &cfg.inputs.editions {
        let e = env.clone();
        g.register(TaskSpec::new(EDITIONS_ENRICHED, &jsonl).input(path), move |ctx| enrich(ctx, e.codec, ingest::parse_edition));
        let e = env.clone();
        g.register(
            verify_params(TaskSpec::new(OPENLIBRARY_EDGES, &jsonl).dep(REFS_ENRICHED).dep(BREFS).dep(EDITIONS_ENRICHED)),
            move |ctx| {
                let slot = ErrorSlot::new();
                // Only references the catalog could not resolve go to the
                // book catalog.
                let matched: HashSet<String> =
                    slot.stream::<BiblioRef>(ctx.dep(BREFS)?)?.filter(BiblioRef::is_matched).map(|b| b.edge_key).collect();
                slot.check()?;
                let (refs, editions) = (ctx.dep(REFS_ENRICHED)?, ctx.dep(EDITIONS_ENRICHED)?);
                let mut out = JsonlWriter::create(&ctx.output, e.codec)?;
                let stats = extensions::match_openlibrary(
                    || Ok(slot.stream::<RawReference>(refs)?.filter(|r| !matched.contains(&r.edge_key()))),
                    || slot.stream::<ReleaseRecord>(editions),
                    &e.spec,
                    &e.link,
                    |t| out.write(&t),
                )?;
                slot.check()?;
                Ok(metrics(out.finish()?, &stats))
            },
        );
        typed.push(OPENLIBRARY_EDGES);
    }

    let mut spec = TaskSpec::new(EDGE_TYPES, "tsv");
    for t in &typed {
        spec = spec.dep(*t);
    }
    g.register(spec, move |ctx| {
        let mut report = EdgeTypeReport::default();
        for (name, ty) in [
            (DOI_EDGES, EdgeType::DoiDoi),
            (URL_EDGES, EdgeType::TargetUrl),
            (WIKIPEDIA_EDGES, EdgeType::SourceWikipedia),
            (OPENLIBRARY_EDGES, EdgeType::TargetOpenLibrary),
        ] {
            if ctx.deps.contains_key(name) {
                report.counts.insert(ty, ctx.dep_metrics(name)?.records);
            }
        }
        if ctx.deps.contains_key(OPENLIBRARY_EDGES) {
            let m = ctx.dep_metrics(OPENLIBRARY_EDGES)?;
            report.openlibrary_works = m.details.get("work_edges").and_then(|v| v.as_u64());
        }
        let mut f = fs::File::create(&ctx.output)?;
        report.write_tsv(&mut f)?;
        f.sync_all()?;
        Ok(metrics(report.total(), &report))
    });

    let mut spec = TaskSpec::new(ALL, "json");
    for t in [BREFS, MATCH_STATS, EDGE_TYPES].iter().chain(typed.iter()) {
        spec = spec.dep(*t);
    }
    g.register(spec, |ctx| {
        let mut manifest = BTreeMap::new();
        for (name, path) in &ctx.deps {
            manifest.insert(name.clone(), ManifestEntry::of(path)?);
        }
        fs::write(&ctx.output, serde_json::to_vec_pretty(&manifest)?)?;
        Ok(TaskMetrics { records: manifest.len() as u64, ..Default::default() })
    });

    g
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
    pub records: u64,
}

impl ManifestEntry {
    fn of(path: &Path) -> Result<Self> {
        Ok(ManifestEntry {
            file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            bytes: fs::metadata(path)?.len(),
            sha256: super::hash_file(path)?,
            records: super::read_meta(path)?.records,
        })
    }
}

fn metrics<T: Serialize>(records: u64, details: &T) -> TaskMetrics {
    TaskMetrics { records, rejects: BTreeMap::new(), details: serde_json::to_value(details).unwrap_or_default() }
}

/// Parses one raw input into canonical JSONL, counting rejected lines.
fn enrich<T, P>(ctx: &TaskCtx, codec: Codec, parse: P) -> Result<TaskMetrics>
where
    T: Serialize,
    P: FnMut(&str) -> std::result::Result<T, ingest::Reject>,
{
    let input = ctx.spec.inputs.first().ok_or_else(|| Error::Config(format!("{} has no input", ctx.spec.name)))?;
    let mut out = JsonlWriter::create(&ctx.output, codec)?;
    let stats: IngestStats = for_each_record(codec::byte_lines(input)?, parse, |r| out.write(&r))?;
    out.finish()?;
    let mut m = metrics(stats.accepted, &stats);
    m.rejects = stats.reject_reasons.clone();
    Ok(m)
}

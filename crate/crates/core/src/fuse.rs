//! Merges exact edges, fuzzy edges and unmatched references into one record
//! per `edge_key`, and derives the match accounting table.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuzzy::MatchReason;
use crate::ingest::{RawReference, ReleaseRecord, ReleaseStage};
use crate::mapreduce::{line_fields, par_group_reduce, par_map_to_tsv, ExternalSorter, GroupOptions, LineSink, SortSpec, TsvRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeStatus {
    Exact,
    Strong,
    Unmatched,
}

impl EdgeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeStatus::Exact => "exact",
            EdgeStatus::Strong => "strong",
            EdgeStatus::Unmatched => "unmatched",
        }
    }
}

impl fmt::Display for EdgeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiblioRef {
    pub edge_key: String,
    pub source_ident: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_ident: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source_year: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_year: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source_release_stage: Option<ReleaseStage>,
    pub match_status: EdgeStatus,
    pub match_reason: MatchReason,
    pub provenance: String,
    pub ref_index: u32,
}

impl BiblioRef {
    pub fn matched(r: &RawReference, target: &ReleaseRecord, status: EdgeStatus, reason: MatchReason) -> Self {
        BiblioRef {
            target_ident: Some(target.ident.clone()),
            target_year: target.year,
            match_status: status,
            match_reason: reason,
            ..BiblioRef::unmatched(r)
        }
    }

    pub fn unmatched(r: &RawReference) -> Self {
        BiblioRef {
            edge_key: r.edge_key(),
            source_ident: r.source_ident.clone(),
            target_ident: None,
            source_year: r.source_year,
            target_year: None,
            source_release_stage: r.source_release_stage,
            match_status: EdgeStatus::Unmatched,
            match_reason: MatchReason::Unknown,
            provenance: r.provenance.clone(),
            ref_index: r.ref_index,
        }
    }

    pub fn is_matched(&self) -> bool {
        self.match_status != EdgeStatus::Unmatched
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }

    /// Total order of fusion preference; smaller wins.
    fn precedence(&self) -> (EdgeStatus, MatchReason, &Option<String>, &str) {
        (self.match_status, self.match_reason, &self.target_ident, &self.provenance)
    }
}

/// Picks one record for an edge key: exact before strong, identifier reasons
/// in scheme order before fuzzy reasons in rule order, then the smallest
/// target ident. Unmatched records only win when nothing matched.
pub fn fuse_group<I: IntoIterator<Item = BiblioRef>>(candidates: I) -> Option<BiblioRef> {
    candidates.into_iter().min_by(|a, b| a.precedence().cmp(&b.precedence()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FuseStats {
    pub refs: u64,
    pub candidates: u64,
    pub matched: u64,
    pub unmatched: u64,
    /// Edge keys whose candidates named more than one target.
    pub conflicts: u64,
    pub failed_groups: u64,
}

fn edge_row(e: &BiblioRef) -> TsvRow {
    TsvRow::new(e.edge_key.clone()).field(e.to_json())
}

/// Fuses candidate edges with the full reference stream. Output reaches
/// `sink` sorted by `edge_key`, once per key.
pub fn fuse_stage<RI, EI, S>(refs: RI, candidates: EI, spec: &SortSpec, mut sink: S) -> Result<FuseStats>
where
    RI: IntoIterator<Item = RawReference>,
    EI: IntoIterator<Item = BiblioRef>,
    S: FnMut(BiblioRef) -> Result<()>,
{
    let par = spec.parallelism;
    let mut sorter = ExternalSorter::new(spec.clone())?;
    let r = par_map_to_tsv(refs, par, |r| vec![edge_row(&BiblioRef::unmatched(r))], &mut sorter, |_| {})?;
    let c = par_map_to_tsv(candidates, par, |e| vec![edge_row(e)], &mut sorter, |_| {})?;
    let mut stats = FuseStats { refs: r.records, candidates: c.records, ..Default::default() };
    let sorted = sorter.finish()?;
    let g = par_group_reduce(
        sorted,
        GroupOptions::default().with_parallelism(par),
        |_, lines| {
            let mut cands = Vec::with_capacity(lines.len());
            for l in lines {
                let fields = line_fields(l);
                let json = fields.get(1).ok_or("missing payload")?;
                cands.push(serde_json::from_str::<BiblioRef>(json).map_err(|e| e.to_string())?);
            }
            let mut targets: Vec<&str> = cands.iter().filter_map(|c| c.target_ident.as_deref()).collect();
            targets.sort_unstable();
            targets.dedup();
            let conflict = targets.len() > 1;
            Ok::<_, String>((fuse_group(cands).ok_or("empty group")?, conflict))
        },
        |(e, conflict)| {
            if e.is_matched() {
                stats.matched += 1;
            } else {
                stats.unmatched += 1;
            }
            stats.conflicts += u64::from(conflict);
            sink(e)
        },
    )?;
    stats.failed_groups = g.failed;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MatchStatRow {
    pub count: u64,
    pub provenance: String,
    pub status: EdgeStatus,
    pub reason: MatchReason,
}

/// Counts per (provenance, status, reason), largest first; ties ordered by
/// provenance, status, reason.
pub fn match_stats<'a, I: IntoIterator<Item = &'a BiblioRef>>(brefs: I) -> Vec<MatchStatRow> {
    let mut counter = MatchStatsCounter::default();
    brefs.into_iter().for_each(|b| counter.add(b));
    counter.rows()
}

pub const MATCH_STATS_HEADER: &str = "count\tprovenance\tstatus\treason";

pub fn write_match_stats<W: Write>(rows: &[MatchStatRow], mut out: W) -> Result<()> {
    writeln!(out, "{MATCH_STATS_HEADER}")?;
    for r in rows {
        writeln!(out, "{}\t{}\t{}\t{}", r.count, r.provenance, r.status, r.reason)?;
    }
    Ok(())
}

pub fn parse_match_stats(text: &str) -> Result<Vec<MatchStatRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line == MATCH_STATS_HEADER || line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Inconsistent(format!("match stats line {}: {line:?}", i + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        let [count, provenance, status, reason] = cols.as_slice() else { return Err(bad()) };
        rows.push(MatchStatRow {
            count: count.parse().map_err(|_| bad())?,
            provenance: provenance.to_string(),
            status: serde_json::from_value(serde_json::Value::String(status.to_string())).map_err(|_| bad())?,
            reason: MatchReason::parse(reason).ok_or_else(bad)?,
        });
    }
    Ok(rows)
}

/// Accumulates match stats from a BiblioRef stream without holding it.
#[derive(Debug, Default)]
pub struct MatchStatsCounter(HashMap<(String, EdgeStatus, MatchReason), u64>);

impl MatchStatsCounter {
    pub fn add(&mut self, b: &BiblioRef) {
        *self.0.entry((b.provenance.clone(), b.match_status, b.match_reason)).or_default() += 1;
    }

    pub fn rows(&self) -> Vec<MatchStatRow> {
        let mut rows: Vec<MatchStatRow> = self
            .0
            .iter()
            .map(|((provenance, status, reason), count)| MatchStatRow { count: *count, provenance: provenance.clone(), status: *status, reason: *reason })
            .collect();
        rows.sort_by(|a, b| {
            b.count
                .cmp(&a.count)
                .then_with(|| a.provenance.cmp(&b.provenance))
                .then_with(|| a.status.cmp(&b.status))
                .then_with(|| a.reason.cmp(&b.reason))
        });
        rows
    }
}

/// Writes each record as one JSON line.
pub struct JsonLinesSink<'a, S: LineSink + ?Sized>(pub &'a mut S);

impl<S: LineSink + ?Sized> JsonLinesSink<'_, S> {
    pub fn push(&mut self, b: &BiblioRef) -> Result<()> {
        self.0.push_line(b.to_json().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Biblio;
    use proptest::prelude::*;

    fn raw(source: &str, idx: u32) -> RawReference {
        RawReference {
            source_ident: source.into(),
            ref_index: idx,
            provenance: "crossref".into(),
            biblio: Biblio { title: Some("t".into()), ..Default::default() },
            source_year: Some(2010),
            source_release_stage: None,
        }
    }

    fn cand(target: &str, status: EdgeStatus, reason: MatchReason) -> BiblioRef {
        let rel = ReleaseRecord { ident: target.into(), ..Default::default() };
        BiblioRef::matched(&raw("w1", 0), &rel, status, reason)
    }

    #[test]
    fn exact_doi_beats_strong() {
        let got = fuse_group(vec![
            cand("w8", EdgeStatus::Strong, MatchReason::JaccardAuthors),
            cand("w9", EdgeStatus::Exact, MatchReason::Doi),
        ])
        .unwrap();
        assert_eq!(got.target_ident.as_deref(), Some("w9"));
        assert_eq!(got.match_reason, MatchReason::Doi);
    }

    #[test]
    fn scheme_precedence_then_target() {
        let got = fuse_group(vec![
            cand("w2", EdgeStatus::Exact, MatchReason::Pmid),
            cand("w3", EdgeStatus::Exact, MatchReason::Isbn),
            cand("w9", EdgeStatus::Exact, MatchReason::Doi),
            cand("w1", EdgeStatus::Exact, MatchReason::Doi),
        ])
        .unwrap();
        assert_eq!(got.target_ident.as_deref(), Some("w1"));
    }

    #[test]
    fn unmatched_loses_to_any_match() {
        let got = fuse_group(vec![BiblioRef::unmatched(&raw("w1", 0)), cand("w5", EdgeStatus::Strong, MatchReason::ContribMismatch)]).unwrap();
        assert!(got.is_matched());
        let alone = fuse_group(vec![BiblioRef::unmatched(&raw("w1", 0))]).unwrap();
        assert_eq!(alone.match_status, EdgeStatus::Unmatched);
        assert!(alone.target_ident.is_none());
    }

    #[test]
    fn stage_conserves_edge_keys() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SortSpec::new(dir.path());
        let refs = vec![raw("w1", 0), raw("w1", 1), raw("w2", 0)];
        let cands = vec![cand("w9", EdgeStatus::Exact, MatchReason::Doi), cand("w8", EdgeStatus::Strong, MatchReason::JaccardAuthors)];
        let mut out = Vec::new();
        let stats = fuse_stage(refs, cands, &spec, |e| {
            out.push(e);
            Ok(())
        })
        .unwrap();
        let keys: Vec<&str> = out.iter().map(|e| e.edge_key.as_str()).collect();
        assert_eq!(keys, vec!["w1_0", "w1_1", "w2_0"]);
        assert_eq!(out[0].target_ident.as_deref(), Some("w9"));
        assert_eq!((stats.matched, stats.unmatched, stats.conflicts), (1, 2, 1));
    }

    #[test]
    fn stats_table_round_trip() {
        let brefs = vec![
            cand("w9", EdgeStatus::Exact, MatchReason::Doi),
            cand("w8", EdgeStatus::Exact, MatchReason::Doi),
            BiblioRef::unmatched(&raw("w1", 0)),
        ];
        let rows = match_stats(&brefs);
        assert_eq!(rows[0].count, 2);
        let mut buf = Vec::new();
        write_match_stats(&rows, &mut buf).unwrap();
        assert_eq!(parse_match_stats(std::str::from_utf8(&buf).unwrap()).unwrap(), rows);
    }

    fn arb_candidate() -> impl Strategy<Value = BiblioRef> {
        let status = prop::sample::select(vec![EdgeStatus::Exact, EdgeStatus::Strong]);
        let reason = prop::sample::select(MatchReason::RULES.into_iter().chain([MatchReason::Doi, MatchReason::Pmid, MatchReason::Isbn]).collect::<Vec<_>>());
        ("w[0-9]", status, reason).prop_map(|(t, s, r)| cand(&t, s, r))
    }

    proptest! {
        #[test]
        fn fusion_is_order_independent(mut cands in prop::collection::vec(arb_candidate(), 1..8), seed in any::<u64>()) {
            let forward = fuse_group(cands.clone());
            use rand::{seq::SliceRandom, SeedableRng};
            cands.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(fuse_group(cands), forward);
        }
    }
}

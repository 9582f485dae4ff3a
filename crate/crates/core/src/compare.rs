//! Set comparison of DOI-to-DOI edge sets.
//!
//! Both sets are normalized, tagged, and sort-merged through the external
//! sorter; duplicates inside one set collapse before counting.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapreduce::{ExternalSorter, LineSink, SortSpec};
use crate::normalize::normalize_doi;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSetReport {
    pub size_c: u64,
    pub size_r: u64,
    pub overlap: u64,
    pub only_c: u64,
    pub only_r: u64,
    /// Input lines excluded because an endpoint was not a DOI.
    pub malformed_c: u64,
    pub malformed_r: u64,
    /// Repeated edges collapsed within one set.
    pub duplicates_c: u64,
    pub duplicates_r: u64,
}

impl EdgeSetReport {
    /// Derives the one-sided counts from set sizes and overlap.
    pub fn from_counts(size_c: u64, size_r: u64, overlap: u64) -> Result<Self> {
        let bad = || Error::Inconsistent(format!("overlap {overlap} exceeds a set size ({size_c}, {size_r})"));
        Ok(EdgeSetReport {
            size_c,
            size_r,
            overlap,
            only_c: size_c.checked_sub(overlap).ok_or_else(bad)?,
            only_r: size_r.checked_sub(overlap).ok_or_else(bad)?,
            ..Default::default()
        })
    }

    pub fn check(&self) -> Result<()> {
        if self.size_c != self.overlap + self.only_c || self.size_r != self.overlap + self.only_r {
            return Err(Error::Inconsistent(format!("{self:?}")));
        }
        Ok(())
    }
}

/// One edge as read, before normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEdge {
    pub citing: String,
    pub cited: String,
}

#[derive(Debug, Clone)]
pub struct EdgeCsvFormat {
    pub citing: String,
    pub cited: String,
    pub delimiter: u8,
}

impl Default for EdgeCsvFormat {
    fn default() -> Self {
        EdgeCsvFormat { citing: "citing".into(), cited: "cited".into(), delimiter: b',' }
    }
}

/// Streams edges from a headered CSV (any supported codec). Rows lacking a
/// column come through as empty endpoints and are counted as malformed later.
pub fn read_edge_csv(path: &Path, fmt: &EdgeCsvFormat) -> Result<impl Iterator<Item = Result<RawEdge>>> {
    let mut reader = csv::ReaderBuilder::new().delimiter(fmt.delimiter).flexible(true).from_reader(crate::codec::open(path)?);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Config(format!("{}: no column {name:?}", path.display())))
    };
    let (ci, di) = (col(&fmt.citing)?, col(&fmt.cited)?);
    Ok(reader.into_records().map(move |rec| {
        let rec = match rec {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => return Ok(RawEdge { citing: String::new(), cited: String::new() }),
        };
        Ok(RawEdge { citing: rec.get(ci).unwrap_or("").to_string(), cited: rec.get(di).unwrap_or("").to_string() })
    }))
}

fn normalized(e: &RawEdge) -> Option<(String, String)> {
    Some((normalize_doi(&e.citing)?.value, normalize_doi(&e.cited)?.value))
}

const TAG_C: u8 = b'C';
const TAG_R: u8 = b'R';

fn push_set<I, S>(edges: I, tag: u8, sink: &mut S) -> Result<u64>
where
    I: IntoIterator<Item = Result<RawEdge>>,
    S: LineSink + ?Sized,
{
    let mut malformed = 0;
    let mut line = Vec::new();
    for e in edges {
        let Some((citing, cited)) = normalized(&e?) else {
            malformed += 1;
            continue;
        };
        line.clear();
        line.extend_from_slice(citing.as_bytes());
        line.push(b'\t');
        line.extend_from_slice(cited.as_bytes());
        line.push(b'\t');
        line.push(tag);
        sink.push_line(&line)?;
    }
    Ok(malformed)
}

/// Compares edge sets C and R. Every edge only in R is passed to `only_r`.
pub fn compare_edge_sets<CI, RI, F>(c: CI, r: RI, spec: &SortSpec, mut only_r: F) -> Result<EdgeSetReport>
where
    CI: IntoIterator<Item = Result<RawEdge>>,
    RI: IntoIterator<Item = Result<RawEdge>>,
    F: FnMut(&str, &str) -> Result<()>,
{
    let mut sorter = ExternalSorter::new(spec.clone().with_stable(true))?;
    let mut report = EdgeSetReport { malformed_c: push_set(c, TAG_C, &mut sorter)?, ..Default::default() };
    report.malformed_r = push_set(r, TAG_R, &mut sorter)?;

    // Lines of one edge are adjacent: endpoints never contain a tab and
    // the tag byte sorts C before R.
    let mut current: Option<Vec<u8>> = None;
    let (mut in_c, mut in_r) = (false, false);
    let mut flush = |edge: &[u8], in_c: bool, in_r: bool, report: &mut EdgeSetReport| -> Result<()> {
        report.size_c += u64::from(in_c);
        report.size_r += u64::from(in_r);
        match (in_c, in_r) {
            (true, true) => report.overlap += 1,
            (true, false) => report.only_c += 1,
            (false, true) => {
                report.only_r += 1;
                let text = std::str::from_utf8(edge).map_err(|e| Error::Inconsistent(e.to_string()))?;
                let (citing, cited) = text.split_once('\t').unwrap_or((text, ""));
                only_r(citing, cited)?;
            }
            (false, false) => {}
        }
        Ok(())
    };
    for line in sorter.finish()? {
        let line = line?;
        let (edge, tag) = line.split_at(line.len() - 2);
        let tag = tag[1];
        if current.as_deref() != Some(edge) {
            if let Some(prev) = current.take() {
                flush(&prev, in_c, in_r, &mut report)?;
            }
            current = Some(edge.to_vec());
            (in_c, in_r) = (false, false);
        }
        let seen = if tag == TAG_C { &mut in_c } else { &mut in_r };
        if *seen {
            if tag == TAG_C {
                report.duplicates_c += 1;
            } else {
                report.duplicates_r += 1;
            }
        }
        *seen = true;
    }
    if let Some(prev) = current {
        flush(&prev, in_c, in_r, &mut report)?;
    }
    report.check()?;
    Ok(report)
}

/// Registrant prefix of a normalized DOI (`10.15468/abc` → `10.15468`).
pub fn doi_prefix(doi: &str) -> &str {
    doi.split_once('/').map_or(doi, |(p, _)| p)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrefixBreakdown {
    pub prefix: String,
    pub edges: u64,
    /// Edges with at least one endpoint under the prefix.
    pub either: u64,
    /// Edges with both endpoints under the prefix.
    pub both: u64,
    /// Prefixes by number of edges touching them, largest first.
    pub top: Vec<(String, u64)>,
}

impl PrefixBreakdown {
    pub fn either_fraction(&self) -> f64 {
        if self.edges == 0 {
            0.0
        } else {
            self.either as f64 / self.edges as f64
        }
    }

    pub fn both_fraction(&self) -> f64 {
        if self.edges == 0 {
            0.0
        } else {
            self.both as f64 / self.edges as f64
        }
    }
}

pub const TOP_PREFIXES: usize = 20;

/// Streaming accumulator for [`PrefixBreakdown`].
#[derive(Debug, Default)]
pub struct PrefixCounter {
    prefix: String,
    edges: u64,
    either: u64,
    both: u64,
    counts: HashMap<String, u64>,
}

impl PrefixCounter {
    pub fn new(prefix: &str) -> Self {
        PrefixCounter { prefix: prefix.to_string(), ..Default::default() }
    }

    pub fn add(&mut self, citing: &str, cited: &str) {
        let (a, b) = (doi_prefix(citing), doi_prefix(cited));
        self.edges += 1;
        let (ha, hb) = (a == self.prefix, b == self.prefix);
        self.either += u64::from(ha || hb);
        self.both += u64::from(ha && hb);
        *self.counts.entry(a.to_string()).or_default() += 1;
        if b != a {
            *self.counts.entry(b.to_string()).or_default() += 1;
        }
    }

    pub fn finish(self) -> PrefixBreakdown {
        let mut top: Vec<(String, u64)> = self.counts.into_iter().collect();
        top.sort_by(|x, y| y.1.cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
        top.truncate(TOP_PREFIXES);
        PrefixBreakdown { prefix: self.prefix, edges: self.edges, either: self.either, both: self.both, top }
    }
}

pub fn prefix_breakdown<'a, I: IntoIterator<Item = (&'a str, &'a str)>>(edges: I, prefix: &str) -> PrefixBreakdown {
    let mut c = PrefixCounter::new(prefix);
    for (a, b) in edges {
        c.add(a, b);
    }
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::time::Instant;

    use rand::{Rng, SeedableRng};

    #[test]
    fn table_arithmetic() {
        let start = Instant::now();
        let r = EdgeSetReport::from_counts(1_186_958_897, 1_303_424_212, 1_046_438_515).unwrap();
        assert_eq!(r.only_c, 140_520_382);
        assert_eq!(r.only_r, 256_985_697);
        r.check().unwrap();
        assert!(start.elapsed().as_secs_f64() < 1.0);
        assert!(EdgeSetReport::from_counts(1, 5, 2).is_err());
    }

    fn edges(v: &[(&str, &str)]) -> Vec<Result<RawEdge>> {
        v.iter().map(|(a, b)| Ok(RawEdge { citing: a.to_string(), cited: b.to_string() })).collect()
    }

    fn spec(dir: &Path) -> SortSpec {
        SortSpec::new(dir)
    }

    #[test]
    fn equal_sets() {
        let dir = tempfile::tempdir().unwrap();
        let v = [("10.1000/a", "10.1000/b"), ("10.1000/b", "10.2000/c")];
        let r = compare_edge_sets(edges(&v), edges(&v), &spec(dir.path()), |_, _| Ok(())).unwrap();
        assert_eq!((r.overlap, r.only_c, r.only_r), (2, 0, 0));
    }

    #[test]
    fn duplicates_and_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let c = edges(&[("10.1000/a", "10.1000/b"), ("https://doi.org/10.1000/A", "10.1000/B"), ("nope", "10.1000/b")]);
        let r = edges(&[("10.1000/a", "10.1000/b"), ("10.1000/a", "10.1000/bb")]);
        let mut only = Vec::new();
        let rep = compare_edge_sets(c, r, &spec(dir.path()), |a, b| {
            only.push((a.to_string(), b.to_string()));
            Ok(())
        })
        .unwrap();
        assert_eq!((rep.size_c, rep.size_r, rep.overlap), (1, 2, 1));
        assert_eq!((rep.malformed_c, rep.duplicates_c), (1, 1));
        assert_eq!(only, vec![("10.1000/a".to_string(), "10.1000/bb".to_string())]);
    }

    #[test]
    fn random_sets_match_hash_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut gen = |n: usize| -> Vec<(String, String)> {
            (0..n)
                .map(|_| (format!("10.{}/p{}", rng.random_range(1000..1004), rng.random_range(0..300)), format!("10.1000/q{}", rng.random_range(0..300))))
                .collect()
        };
        let (c, r) = (gen(10_000), gen(10_000));
        let cs: HashSet<_> = c.iter().cloned().collect();
        let rs: HashSet<_> = r.iter().cloned().collect();
        let to_raw = |v: &[(String, String)]| v.iter().map(|(a, b)| Ok(RawEdge { citing: a.clone(), cited: b.clone() })).collect::<Vec<_>>();
        let rep = compare_edge_sets(to_raw(&c), to_raw(&r), &spec(dir.path()), |_, _| Ok(())).unwrap();
        assert_eq!(rep.size_c, cs.len() as u64);
        assert_eq!(rep.size_r, rs.len() as u64);
        assert_eq!(rep.overlap, cs.intersection(&rs).count() as u64);
        assert_eq!(rep.only_r, rs.difference(&cs).count() as u64);
    }

    #[test]
    fn prefix_examples() {
        let b = prefix_breakdown([("10.15468/a", "10.15468/b"), ("10.15468/c", "10.15468/d")], "10.15468");
        assert_eq!(b.either_fraction(), 1.0);
        assert_eq!(b.top, vec![("10.15468".to_string(), 2)]);
        let empty = prefix_breakdown(std::iter::empty(), "10.15468");
        assert!(empty.top.is_empty());
        assert_eq!(empty.either, 0);
        let mixed = prefix_breakdown([("10.15468/a", "10.1000/b"), ("10.1000/c", "10.2000/d"), ("10.15468/e", "10.15468/f")], "10.15468");
        assert_eq!((mixed.edges, mixed.either, mixed.both), (3, 2, 1));
    }

    #[test]
    fn csv_columns_configurable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("coci.csv");
        std::fs::write(&path, "oci,citing,cited\n1,10.1000/a,10.1000/b\n2,10.1000/c\n").unwrap();
        let got: Vec<RawEdge> = read_edge_csv(&path, &EdgeCsvFormat::default()).unwrap().map(|e| e.unwrap()).collect();
        assert_eq!(got.len(), 2);
        assert_eq!(got[1].cited, "");
        let fmt = EdgeCsvFormat { citing: "source".into(), ..Default::default() };
        assert!(read_edge_csv(&path, &fmt).is_err());
    }
}

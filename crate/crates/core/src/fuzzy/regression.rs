//! Labeled verification pairs kept as a regression suite.
//!
//! One pair per line: `A-json<TAB>B-json<TAB>status[<TAB>reason[<TAB>negative-for]]`.
//! `negative-for` is a comma list of rules the pair must not be decided by.
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::{verify_with, Features, MatchReason, MatchResult, MatchStatus, VerifyConfig};
use crate::error::{Error, Result};
use crate::ingest::{parse_release, ReleaseRecord};

#[derive(Debug, Clone)]
pub struct LabeledPair {
    pub line: usize,
    pub a: ReleaseRecord,
    pub b: ReleaseRecord,
    pub status: MatchStatus,
    pub reason: Option<MatchReason>,
    pub negative_for: Vec<MatchReason>,
}

pub fn parse_labeled_pair(line_no: usize, line: &str) -> Result<Option<LabeledPair>> {
    let trimmed = line.trim_end_matches(['\r', '\n']);
    if trimmed.trim().is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let bad = |what: String| Error::Inconsistent(format!("labeled pair line {line_no}: {what}"));
    let cols: Vec<&str> = trimmed.split('\t').collect();
    if !(3..=5).contains(&cols.len()) {
        return Err(bad(format!("expected 3 to 5 columns, found {}", cols.len())));
    }
    let record = |s: &str| parse_release(s).map_err(|e| bad(format!("record rejected: {}", e.label())));
    let status = MatchStatus::parse(cols[2]).ok_or_else(|| bad(format!("unknown status {:?}", cols[2])))?;
    let reason = match cols.get(3).map(|s| s.trim()).filter(|s| !s.is_empty()) {
        Some(s) => Some(MatchReason::parse(s).ok_or_else(|| bad(format!("unknown reason {s:?}")))?),
        None => None,
    };
    let negative_for = match cols.get(4) {
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| MatchReason::parse(s).ok_or_else(|| bad(format!("unknown reason {s:?}"))))
            .collect::<Result<_>>()?,
        None => vec![],
    };
    Ok(Some(LabeledPair { line: line_no, a: record(cols[0])?, b: record(cols[1])?, status, reason, negative_for }))
}

pub fn load_labeled_pairs(path: &Path) -> Result<Vec<LabeledPair>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(p) = parse_labeled_pair(i + 1, line)? {
            out.push(p);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct RegressionFailure {
    pub line: usize,
    pub expected_status: MatchStatus,
    pub expected_reason: Option<MatchReason>,
    pub got: MatchResult,
    /// Set when the pair was also checked in the reverse direction and the
    /// two directions disagree.
    pub asymmetric: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RegressionReport {
    pub total: usize,
    pub agreed: usize,
    pub failures: Vec<RegressionFailure>,
    /// Cases per reason: (positives labeled with it, negatives naming it).
    pub coverage: BTreeMap<String, (usize, usize)>,
}

impl RegressionReport {
    pub fn agreement(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.agreed as f64 / self.total as f64
    }
}

pub fn run_regression(pairs: &[LabeledPair], cfg: &VerifyConfig) -> RegressionReport {
    let mut report = RegressionReport { total: pairs.len(), ..Default::default() };
    for p in pairs {
        let (fa, fb) = (Features::of(&p.a), Features::of(&p.b));
        let got = verify_with(&fa, &fb, cfg);
        let back = verify_with(&fb, &fa, cfg);
        let ok = got.status == p.status
            && p.reason.is_none_or(|r| r == got.reason)
            && !p.negative_for.contains(&got.reason)
            && got == back;
        if ok {
            report.agreed += 1;
        } else {
            report.failures.push(RegressionFailure {
                line: p.line,
                expected_status: p.status,
                expected_reason: p.reason,
                got,
                asymmetric: got != back,
            });
        }
        if let Some(r) = p.reason {
            report.coverage.entry(r.as_str().to_string()).or_default().0 += 1;
        }
        for r in &p.negative_for {
            report.coverage.entry(r.as_str().to_string()).or_default().1 += 1;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_columns() {
        let line = "{\"ident\":\"a\",\"title\":\"Graph Rewriting\"}\t{\"ident\":\"b\",\"title\":\"Graph Rewriting\"}\tweak\ttokenizedauthors\tjaccardauthors,contribmismatch";
        let p = parse_labeled_pair(1, line).unwrap().unwrap();
        assert_eq!(p.status, MatchStatus::Weak);
        assert_eq!(p.reason, Some(MatchReason::TokenizedAuthors));
        assert_eq!(p.negative_for, vec![MatchReason::JaccardAuthors, MatchReason::ContribMismatch]);
        let report = run_regression(&[p], &VerifyConfig::default());
        assert_eq!(report.agreed, 1);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_labeled_pair(1, "# comment").unwrap().is_none());
        assert!(parse_labeled_pair(2, "a\tb").is_err());
        assert!(parse_labeled_pair(3, "{\"ident\":\"a\"}\t{\"ident\":\"b\"}\tmaybe").is_err());
    }
}

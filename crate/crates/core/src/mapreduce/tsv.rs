use std::borrow::Cow;
use std::io::Write;

use crate::error::Result;
use crate::par::{self, Parallelism};

/// Escapes backslash, TAB, CR and LF so a field never breaks line framing.
pub fn escape_field(s: &str) -> Cow<'_, str> {
    if !s.bytes().any(|b| matches!(b, b'\\' | b'\t' | b'\n' | b'\r')) {
        return Cow::Borrowed(s);
    }
    let mut out = String::with_capacity(s.len() + 8);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    Cow::Owned(out)
}

pub fn unescape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// The key column of a TSV line (everything before the first TAB).
pub fn line_key(line: &[u8]) -> &[u8] {
    match memchr_tab(line) {
        Some(i) => &line[..i],
        None => line,
    }
}

fn memchr_tab(line: &[u8]) -> Option<usize> {
    line.iter().position(|&b| b == b'\t')
}

/// All columns of a TSV line, unescaped.
pub fn line_fields(line: &[u8]) -> Vec<String> {
    String::from_utf8_lossy(line).split('\t').map(unescape_field).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TsvRow {
    pub key: String,
    pub fields: Vec<String>,
}

impl TsvRow {
    pub fn new(key: impl Into<String>) -> Self {
        TsvRow { key: key.into(), fields: Vec::new() }
    }

    pub fn field(mut self, value: impl Into<String>) -> Self {
        self.fields.push(value.into());
        self
    }

    pub fn to_line(&self) -> Vec<u8> {
        let mut line = escape_field(&self.key).into_owned().into_bytes();
        for f in &self.fields {
            line.push(b'\t');
            line.extend_from_slice(escape_field(f).as_bytes());
        }
        line
    }
}

/// Anything that accepts framed lines (no trailing newline).
pub trait LineSink {
    fn push_line(&mut self, line: &[u8]) -> Result<()>;
}

impl LineSink for Vec<Vec<u8>> {
    fn push_line(&mut self, line: &[u8]) -> Result<()> {
        self.push(line.to_vec());
        Ok(())
    }
}

/// Adapts a writer into a newline-framing [`LineSink`].
pub struct WriteSink<W>(pub W);

impl<W: Write> LineSink for WriteSink<W> {
    fn push_line(&mut self, line: &[u8]) -> Result<()> {
        self.0.write_all(line)?;
        self.0.write_all(b"\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MapStats {
    pub records: u64,
    pub lines: u64,
    /// Records for which the key function produced no key.
    pub skipped: u64,
}

impl MapStats {
    pub fn merge(&mut self, other: MapStats) {
        self.records += other.records;
        self.lines += other.lines;
        self.skipped += other.skipped;
    }
}

/// Maps records to keyed lines. A record with no keys goes to `side`.
pub fn map_to_tsv<R, I, F, S, D>(records: I, mut key_fn: F, sink: &mut S, mut side: D) -> Result<MapStats>
where
    I: IntoIterator<Item = R>,
    F: FnMut(&R) -> Vec<TsvRow>,
    S: LineSink + ?Sized,
    D: FnMut(R),
{
    let mut stats = MapStats::default();
    for record in records {
        stats.records += 1;
        let rows = key_fn(&record);
        if rows.is_empty() {
            stats.skipped += 1;
            side(record);
            continue;
        }
        for row in rows {
            sink.push_line(&row.to_line())?;
            stats.lines += 1;
        }
    }
    Ok(stats)
}

const MAP_CHUNK: usize = 8192;

/// [`map_to_tsv`] with the key function evaluated data-parallel over chunks.
/// Output order is identical to the sequential version.
pub fn par_map_to_tsv<R, I, F, S, D>(
    records: I,
    par: Parallelism,
    key_fn: F,
    sink: &mut S,
    mut side: D,
) -> Result<MapStats>
where
    R: Send + Sync,
    I: IntoIterator<Item = R>,
    F: Fn(&R) -> Vec<TsvRow> + Sync + Send,
    S: LineSink + ?Sized,
    D: FnMut(R),
{
    let mut stats = MapStats::default();
    let mut chunk = Vec::with_capacity(MAP_CHUNK);
    let mut flush = |chunk: &mut Vec<R>, stats: &mut MapStats| -> Result<()> {
        let keyed = par::map(chunk, par, |r| key_fn(r).iter().map(TsvRow::to_line).collect::<Vec<_>>());
        for (record, lines) in chunk.drain(..).zip(keyed) {
            stats.records += 1;
            if lines.is_empty() {
                stats.skipped += 1;
                side(record);
                continue;
            }
            for line in lines {
                sink.push_line(&line)?;
                stats.lines += 1;
            }
        }
        Ok(())
    };
    for record in records {
        chunk.push(record);
        if chunk.len() == MAP_CHUNK {
            flush(&mut chunk, &mut stats)?;
        }
    }
    flush(&mut chunk, &mut stats)?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn keyless_records_go_to_side_channel() {
        let records = vec![("a", "x"), ("", "y"), ("c", "z")];
        let mut lines: Vec<Vec<u8>> = Vec::new();
        let mut side = Vec::new();
        let stats = map_to_tsv(
            records,
            |(k, v)| if k.is_empty() { vec![] } else { vec![TsvRow::new(*k).field(*v)] },
            &mut lines,
            |r| side.push(r),
        )
        .unwrap();
        assert_eq!(lines, vec![b"a\tx".to_vec(), b"c\tz".to_vec()]);
        assert_eq!(side, vec![("", "y")]);
        assert_eq!(stats, MapStats { records: 3, lines: 2, skipped: 1 });
    }

    #[test]
    fn tab_in_payload_is_escaped() {
        let line = TsvRow::new("k").field("a\tb\nc\\").to_line();
        assert_eq!(line, b"k\ta\\tb\\nc\\\\".to_vec());
        assert_eq!(line_fields(&line), vec!["k".to_string(), "a\tb\nc\\".to_string()]);
        assert_eq!(line_key(&line), b"k");
    }

    #[test]
    fn parallel_map_matches_count_oracle() {
        let records: Vec<u64> = (0..10_000u64).map(|i| i.wrapping_mul(2654435761) % 1000).collect();
        let keyed = records.iter().filter(|r| **r % 3 != 0).count() as u64;
        let key_fn = |r: &u64| if r % 3 == 0 { vec![] } else { vec![TsvRow::new(format!("k{r}")).field("p")] };
        let mut seq: Vec<Vec<u8>> = Vec::new();
        let mut par_lines: Vec<Vec<u8>> = Vec::new();
        let s1 = map_to_tsv(records.clone(), key_fn, &mut seq, |_| {}).unwrap();
        let s2 = par_map_to_tsv(records, Parallelism::threads(4), key_fn, &mut par_lines, |_| {}).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(seq, par_lines);
        assert_eq!(s1.lines, keyed);
    }

    proptest! {
        #[test]
        fn escape_round_trip(s in "\\PC*|[\\t\\n\\r\\\\a]{0,12}") {
            let e = escape_field(&s);
            prop_assert!(!e.contains('\t') && !e.contains('\n') && !e.contains('\r'));
            prop_assert_eq!(unescape_field(&e), s);
        }
    }
}

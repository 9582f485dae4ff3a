use std::fmt::Display;
use std::io;

use super::tsv::line_key;
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GroupStats {
    pub groups: u64,
    pub lines: u64,
    /// Groups whose reducer returned an error; their output is dropped.
    pub failed: u64,
    /// Groups skipped for exceeding the size cap.
    pub hot_keys: u64,
}

impl GroupStats {
    pub fn merge(&mut self, other: GroupStats) {
        self.groups += other.groups;
        self.lines += other.lines;
        self.failed += other.failed;
        self.hot_keys += other.hot_keys;
    }
}

/// Splits a key-sorted line stream into contiguous groups.
///
/// Each [`Group`] streams its lines; the grouper drains whatever the caller
/// leaves unread before producing the next group. Out-of-order input is
/// reported as an error rather than silently producing split groups.
pub struct Grouper<I> {
    inner: I,
    lookahead: Option<Vec<u8>>,
    current: Option<Vec<u8>>,
    in_group: bool,
}

impl<I> Grouper<I>
where
    I: Iterator<Item = Result<Vec<u8>>>,
{
    pub fn new(inner: I) -> Self {
        Grouper { inner, lookahead: None, current: None, in_group: false }
    }

    fn pull(&mut self) -> Option<Result<Vec<u8>>> {
        self.lookahead.take().map(Ok).or_else(|| self.inner.next())
    }

    /// Next line of the current group, or `None` at a key boundary.
    fn next_in_group(&mut self) -> Option<Result<Vec<u8>>> {
        if !self.in_group {
            return None;
        }
        match self.pull() {
            Some(Ok(line)) => {
                if Some(line_key(&line)) == self.current.as_deref() {
                    Some(Ok(line))
                } else {
                    self.lookahead = Some(line);
                    self.in_group = false;
                    None
                }
            }
            Some(Err(e)) => {
                self.in_group = false;
                Some(Err(e))
            }
            None => {
                self.in_group = false;
                None
            }
        }
    }

    pub fn next_group(&mut self) -> Option<Result<Group<'_, I>>> {
        while self.in_group {
            match self.next_in_group()? {
                Ok(_) => {}
                Err(e) => return Some(Err(e)),
            }
        }
        let first = match self.pull()? {
            Ok(line) => line,
            Err(e) => return Some(Err(e)),
        };
        let key = line_key(&first).to_vec();
        if let Some(prev) = &self.current {
            if key < *prev {
                return Some(Err(Error::Io(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!(
                        "input not sorted: key {:?} after {:?}",
                        String::from_utf8_lossy(&key),
                        String::from_utf8_lossy(prev)
                    ),
                ))));
            }
        }
        self.current = Some(key);
        self.in_group = true;
        Some(Ok(Group { grouper: self, first: Some(first) }))
    }
}

/// One key's lines, streamed.
pub struct Group<'a, I> {
    grouper: &'a mut Grouper<I>,
    first: Option<Vec<u8>>,
}

impl<I> Group<'_, I> {
    pub fn key(&self) -> &[u8] {
        self.grouper.current.as_deref().unwrap_or_default()
    }
}

impl<I> Iterator for Group<'_, I>
where
    I: Iterator<Item = Result<Vec<u8>>>,
{
    type Item = Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(first) = self.first.take() {
            return Some(Ok(first));
        }
        self.grouper.next_in_group()
    }
}

/// Invokes `reduce` once per distinct key of a sorted stream, in key order.
///
/// A reducer error is logged and counts as a failed group; processing
/// continues. Errors from `sink` or the input abort.
pub fn group_reduce<I, R, E, F, S>(sorted: I, mut reduce: F, mut sink: S) -> Result<GroupStats>
where
    I: IntoIterator<Item = Result<Vec<u8>>>,
    E: Display,
    F: FnMut(&[u8], &mut dyn Iterator<Item = Result<Vec<u8>>>) -> std::result::Result<R, E>,
    S: FnMut(R) -> Result<()>,
{
    let mut grouper = Grouper::new(sorted.into_iter());
    let mut stats = GroupStats::default();
    while let Some(group) = grouper.next_group() {
        let group = group?;
        let key = group.key().to_vec();
        let mut lines = 0u64;
        let mut io_error = None;
        let mut counted = group.inspect(|l| {
            if l.is_ok() {
                lines += 1;
            }
        });
        let outcome = reduce(&key, &mut counted);
        // Drain the rest so line counts cover the whole group.
        for line in counted.by_ref() {
            if let Err(e) = line {
                io_error = Some(e);
                break;
            }
        }
        drop(counted);
        if let Some(e) = io_error {
            return Err(e);
        }
        stats.groups += 1;
        stats.lines += lines;
        match outcome {
            Ok(out) => sink(out)?,
            Err(e) => {
                stats.failed += 1;
                log::warn!("event=reduce_failed key={:?} error={e}", String::from_utf8_lossy(&key));
            }
        }
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy)]
pub struct GroupOptions {
    /// Groups with more lines than this are skipped as hot keys.
    pub cap: Option<usize>,
    pub parallelism: Parallelism,
    /// Materialized bytes per parallel batch.
    pub batch_bytes: usize,
}

impl Default for GroupOptions {
    fn default() -> Self {
        GroupOptions { cap: None, parallelism: Parallelism::default(), batch_bytes: 16 << 20 }
    }
}

impl GroupOptions {
    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = Some(cap);
        self
    }

    pub fn with_parallelism(mut self, par: Parallelism) -> Self {
        self.parallelism = par;
        self
    }
}

struct Materialized {
    key: Vec<u8>,
    lines: Vec<Vec<u8>>,
}

/// Group reduction for pure reducers: groups are materialized in bounded
/// batches and reduced data-parallel; outputs reach `sink` in key order.
pub fn par_group_reduce<I, R, E, F, S>(sorted: I, opts: GroupOptions, reduce: F, mut sink: S) -> Result<GroupStats>
where
    I: IntoIterator<Item = Result<Vec<u8>>>,
    R: Send,
    E: Display + Send,
    F: Fn(&[u8], &[Vec<u8>]) -> std::result::Result<R, E> + Sync + Send,
    S: FnMut(R) -> Result<()>,
{
    let mut grouper = Grouper::new(sorted.into_iter());
    let mut stats = GroupStats::default();
    let mut batch: Vec<Materialized> = Vec::new();
    let mut batch_bytes = 0usize;

    let mut flush = |batch: &mut Vec<Materialized>, stats: &mut GroupStats| -> Result<()> {
        let outcomes = par::map(batch, opts.parallelism, |g| reduce(&g.key, &g.lines));
        for (group, outcome) in batch.drain(..).zip(outcomes) {
            match outcome {
                Ok(out) => sink(out)?,
                Err(e) => {
                    stats.failed += 1;
                    log::warn!("event=reduce_failed key={:?} error={e}", String::from_utf8_lossy(&group.key));
                }
            }
        }
        Ok(())
    };

    while let Some(group) = grouper.next_group() {
        let group = group?;
        let key = group.key().to_vec();
        let mut lines = Vec::new();
        let mut size = 0usize;
        let mut count = 0u64;
        let mut hot = false;
        for line in group {
            let line = line?;
            count += 1;
            if hot {
                continue;
            }
            if opts.cap.is_some_and(|cap| lines.len() >= cap) {
                hot = true;
                lines = Vec::new();
                continue;
            }
            size += line.len();
            lines.push(line);
        }
        stats.groups += 1;
        stats.lines += count;
        if hot {
            stats.hot_keys += 1;
            log::warn!("event=hot_key key={:?} size={count}", String::from_utf8_lossy(&key));
            continue;
        }
        batch_bytes += size + key.len();
        batch.push(Materialized { key, lines });
        if batch_bytes >= opts.batch_bytes || batch.len() >= 65_536 {
            flush(&mut batch, &mut stats)?;
            batch_bytes = 0;
        }
    }
    flush(&mut batch, &mut stats)?;
    Ok(stats)
}

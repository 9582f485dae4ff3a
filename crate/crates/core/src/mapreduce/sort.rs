use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use tempfile::TempDir;

use super::tsv::LineSink;
use super::SortSpec;
use crate::codec::{self, ByteLines, Codec};
use crate::error::{Error, Result};
use crate::par;

/// Arena block size; lines longer than this get a block of their own.
const BLOCK_SIZE: usize = 1 << 20;
/// Share of the memory budget used for the in-memory chunk. The rest covers
/// merge buffers, codec state and allocator slack.
const CHUNK_SHARE: f64 = 0.7;

#[derive(Debug, Clone, Copy)]
struct Entry {
    block: u32,
    offset: u32,
    len: u32,
    key_len: u32,
}

impl Entry {
    const SIZE: usize = std::mem::size_of::<Entry>();
}

fn key_len(line: &[u8]) -> usize {
    line.iter().position(|&b| b == b'\t').unwrap_or(line.len())
}

/// Byte-lexicographic key order, then (when stable) full-line order.
fn compare_lines(a: &[u8], a_key: usize, b: &[u8], b_key: usize, stable: bool) -> Ordering {
    a[..a_key].cmp(&b[..b_key]).then_with(|| if stable { a.cmp(b) } else { Ordering::Equal })
}

#[derive(Default)]
struct Chunk {
    block_size: usize,
    blocks: Vec<Vec<u8>>,
    entries: Vec<Entry>,
    /// Bytes allocated by `blocks` and `entries`.
    allocated: usize,
}

impl Chunk {
    fn new(limit: usize) -> Self {
        Chunk { block_size: BLOCK_SIZE.min(limit / 8).max(256), ..Default::default() }
    }

    fn line(&self, e: &Entry) -> &[u8] {
        let start = e.offset as usize;
        &self.blocks[e.block as usize][start..start + e.len as usize]
    }

    /// Bytes that pushing `len` more would allocate.
    fn growth_for(&self, len: usize) -> usize {
        let block_growth = match self.blocks.last() {
            Some(b) if b.capacity() - b.len() >= len => 0,
            _ => len.max(self.block_size),
        };
        let entry_growth = if self.entries.len() == self.entries.capacity() {
            self.entries.capacity().max(64) * Entry::SIZE
        } else {
            0
        };
        block_growth + entry_growth
    }

    fn push(&mut self, line: &[u8]) {
        let need_block = match self.blocks.last() {
            Some(b) => b.capacity() - b.len() < line.len(),
            None => true,
        };
        if need_block {
            let cap = line.len().max(self.block_size);
            self.blocks.push(Vec::with_capacity(cap));
            self.allocated += cap;
        }
        if self.entries.len() == self.entries.capacity() {
            let extra = self.entries.capacity().max(64);
            self.entries.reserve_exact(extra);
            self.allocated += extra * Entry::SIZE;
        }
        let block = self.blocks.len() - 1;
        let buf = &mut self.blocks[block];
        let offset = buf.len();
        buf.extend_from_slice(line);
        self.entries.push(Entry {
            block: block as u32,
            offset: offset as u32,
            len: line.len() as u32,
            key_len: key_len(line) as u32,
        });
    }

    fn sort(&mut self, spec: &SortSpec) {
        let blocks = &self.blocks;
        let stable = spec.stable;
        let lookup = |e: &Entry| {
            let start = e.offset as usize;
            &blocks[e.block as usize][start..start + e.len as usize]
        };
        // Arena position encodes input order, which makes the unstable sort
        // deterministic and input-order preserving for equal keys. An empty
        // line shares its offset with the next line, hence `len`.
        par::sort_unstable_by(&mut self.entries, spec.parallelism, |a, b| {
            compare_lines(lookup(a), a.key_len as usize, lookup(b), b.key_len as usize, stable)
                .then_with(|| (a.block, a.offset, a.len).cmp(&(b.block, b.offset, b.len)))
        });
    }

    fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SortStats {
    pub lines: u64,
    pub bytes: u64,
    pub runs: u64,
    pub merge_passes: u64,
}

/// Push-based external sorter. Feed lines with [`LineSink::push_line`], then
/// call [`ExternalSorter::finish`] for the sorted stream.
pub struct ExternalSorter {
    spec: SortSpec,
    chunk: Chunk,
    chunk_limit: usize,
    runs: Vec<PathBuf>,
    dir: Option<TempDir>,
    stats: SortStats,
}

impl ExternalSorter {
    pub fn new(spec: SortSpec) -> Result<Self> {
        spec.validate()?;
        let chunk_limit = (spec.memory_budget as f64 * CHUNK_SHARE) as usize;
        Ok(ExternalSorter { spec, chunk: Chunk::new(chunk_limit), chunk_limit, runs: Vec::new(), dir: None, stats: SortStats::default() })
    }

    #[cfg(test)]
    fn with_chunk_limit(mut self, limit: usize) -> Self {
        self.chunk_limit = limit;
        self.chunk = Chunk::new(limit);
        self
    }

    pub fn spec(&self) -> &SortSpec {
        &self.spec
    }

    fn spill_err(&self, source: io::Error) -> Error {
        Error::Spill { dir: self.spec.tmp_dir.clone(), source }
    }

    fn run_dir(&mut self) -> Result<PathBuf> {
        if self.dir.is_none() {
            let dir = tempfile::Builder::new()
                .prefix("refgraph-sort-")
                .tempdir_in(&self.spec.tmp_dir)
                .map_err(|e| self.spill_err(e))?;
            self.dir = Some(dir);
        }
        Ok(self.dir.as_ref().unwrap().path().to_path_buf())
    }

    fn spill(&mut self) -> Result<()> {
        if self.chunk.is_empty() {
            return Ok(());
        }
        self.chunk.sort(&self.spec);
        let dir = self.run_dir()?;
        let path = self.spec.codec.decorate(dir.join(format!("run-{:06}.tsv", self.runs.len())));
        let write = || -> io::Result<()> {
            let mut w = codec::create(&path, self.spec.codec)?;
            for e in &self.chunk.entries {
                w.write_all(self.chunk.line(e))?;
                w.write_all(b"\n")?;
            }
            w.finish()
        };
        write().map_err(|e| self.spill_err(e))?;
        log::debug!("event=spill run={} lines={}", self.runs.len(), self.chunk.entries.len());
        self.runs.push(path);
        self.stats.runs += 1;
        // Keep the first block and the entry buffer for the next chunk.
        self.chunk.entries.clear();
        self.chunk.blocks.truncate(1);
        if let Some(b) = self.chunk.blocks.first_mut() {
            b.clear();
        }
        self.chunk.allocated = self.chunk.blocks.iter().map(Vec::capacity).sum::<usize>()
            + self.chunk.entries.capacity() * Entry::SIZE;
        Ok(())
    }

    /// Per-run memory in the merge phase: read buffer plus decoder state.
    fn merge_fan_in(&self) -> usize {
        let per_run = match self.spec.codec {
            Codec::Zstd => 4 << 20,
            Codec::Gzip | Codec::None => 512 << 10,
        };
        ((self.spec.memory_budget as usize / 2) / per_run).clamp(2, 256)
    }

    pub fn finish(mut self) -> Result<SortedLines> {
        if self.runs.is_empty() {
            self.chunk.sort(&self.spec);
            let stats = self.stats;
            let chunk = std::mem::take(&mut self.chunk);
            return Ok(SortedLines { inner: Inner::Memory { chunk, pos: 0 }, stats, _dir: None });
        }
        self.spill()?;
        self.chunk = Chunk::new(0);
        let fan_in = self.merge_fan_in();
        let dir = self.run_dir()?;
        let mut generation = 0;
        while self.runs.len() > fan_in {
            self.stats.merge_passes += 1;
            generation += 1;
            let mut next = Vec::new();
            for (i, group) in self.runs.chunks(fan_in).enumerate() {
                let path = self.spec.codec.decorate(dir.join(format!("merge-{generation:03}-{i:06}.tsv")));
                let mut merger = Merger::open(group, self.spec.stable)?;
                let mut w = codec::create(&path, self.spec.codec).map_err(|e| self.spill_err(e))?;
                while let Some(line) = merger.next() {
                    let line = line?;
                    w.write_all(&line).and_then(|_| w.write_all(b"\n")).map_err(|e| self.spill_err(e))?;
                }
                w.finish().map_err(|e| self.spill_err(e))?;
                for old in group {
                    let _ = std::fs::remove_file(old);
                }
                next.push(path);
            }
            self.runs = next;
        }
        self.stats.merge_passes += 1;
        let merger = Merger::open(&self.runs, self.spec.stable)?;
        Ok(SortedLines { inner: Inner::Merge(merger), stats: self.stats, _dir: self.dir.take() })
    }
}

impl LineSink for ExternalSorter {
    fn push_line(&mut self, line: &[u8]) -> Result<()> {
        if line.contains(&b'\n') {
            return Err(Error::Io(io::Error::new(io::ErrorKind::InvalidInput, "line contains a newline")));
        }
        if line.len() >= u32::MAX as usize {
            return Err(Error::Io(io::Error::new(io::ErrorKind::InvalidInput, "line too long")));
        }
        if !self.chunk.is_empty() && self.chunk.allocated + self.chunk.growth_for(line.len()) > self.chunk_limit {
            self.spill()?;
        }
        self.chunk.push(line);
        self.stats.lines += 1;
        self.stats.bytes += line.len() as u64 + 1;
        Ok(())
    }
}

struct HeapItem {
    line: Vec<u8>,
    key_len: usize,
    run: usize,
    stable: bool,
}

impl Ord for HeapItem {
    // Reversed: BinaryHeap is a max-heap and we want the smallest line first.
    fn cmp(&self, other: &Self) -> Ordering {
        compare_lines(&other.line, other.key_len, &self.line, self.key_len, self.stable)
            .then_with(|| other.run.cmp(&self.run))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapItem {}

struct Merger {
    readers: Vec<ByteLines<Box<dyn BufRead + Send>>>,
    heap: BinaryHeap<HeapItem>,
    stable: bool,
}

impl Merger {
    fn open(runs: &[PathBuf], stable: bool) -> Result<Self> {
        let mut readers = Vec::with_capacity(runs.len());
        for path in runs {
            readers.push(codec::byte_lines(path)?);
        }
        let mut merger = Merger { readers, heap: BinaryHeap::with_capacity(runs.len()), stable };
        for run in 0..merger.readers.len() {
            merger.refill(run)?;
        }
        Ok(merger)
    }

    fn refill(&mut self, run: usize) -> Result<()> {
        if let Some(line) = self.readers[run].next() {
            let line = line?;
            let key_len = key_len(&line);
            self.heap.push(HeapItem { line, key_len, run, stable: self.stable });
        }
        Ok(())
    }

    fn next(&mut self) -> Option<Result<Vec<u8>>> {
        let item = self.heap.pop()?;
        if let Err(e) = self.refill(item.run) {
            return Some(Err(e));
        }
        Some(Ok(item.line))
    }
}

enum Inner {
    Memory { chunk: Chunk, pos: usize },
    Merge(Merger),
}

/// Sorted output of an [`ExternalSorter`]. Spilled runs are deleted when this
/// is dropped.
pub struct SortedLines {
    inner: Inner,
    stats: SortStats,
    _dir: Option<TempDir>,
}

impl SortedLines {
    pub fn stats(&self) -> SortStats {
        self.stats
    }
}

impl Iterator for SortedLines {
    type Item = Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        match &mut self.inner {
            Inner::Memory { chunk, pos } => {
                let e = chunk.entries.get(*pos)?;
                *pos += 1;
                Some(Ok(chunk.line(e).to_vec()))
            }
            Inner::Merge(m) => m.next(),
        }
    }
}

/// Sorts a line stream. Lines must not contain newlines.
pub fn external_sort<I, L>(lines: I, spec: SortSpec) -> Result<SortedLines>
where
    I: IntoIterator<Item = L>,
    L: AsRef<[u8]>,
{
    let mut sorter = ExternalSorter::new(spec)?;
    for line in lines {
        sorter.push_line(line.as_ref())?;
    }
    sorter.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapreduce::MIN_MEMORY_BUDGET;
    use crate::par::Parallelism;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn spec(dir: &std::path::Path) -> SortSpec {
        SortSpec::new(dir).with_memory_budget(MIN_MEMORY_BUDGET)
    }

    fn collect(s: SortedLines) -> Vec<Vec<u8>> {
        s.map(Result::unwrap).collect()
    }

    fn oracle_sort(mut lines: Vec<Vec<u8>>, stable: bool) -> Vec<Vec<u8>> {
        // Stable std sort by key then (optionally) full line.
        lines.sort_by(|a, b| {
            let (ka, kb) = (key_len(a), key_len(b));
            a[..ka].cmp(&b[..kb]).then_with(|| if stable { a.cmp(b) } else { Ordering::Equal })
        });
        lines
    }

    fn random_lines(n: usize, seed: u64) -> Vec<Vec<u8>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let key: String = (0..rng.random_range(0..6)).map(|_| rng.random_range(b'a'..=b'e') as char).collect();
                format!("{key}\t{i}\t{}", rng.random::<u32>()).into_bytes()
            })
            .collect()
    }

    #[test]
    fn empty_input() {
        let dir = tempfile::tempdir().unwrap();
        assert!(collect(external_sort(Vec::<Vec<u8>>::new(), spec(dir.path())).unwrap()).is_empty());
    }

    #[test]
    fn sorted_input_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let lines: Vec<Vec<u8>> = (0..1000).map(|i| format!("{i:05}\tx").into_bytes()).collect();
        assert_eq!(collect(external_sort(lines.clone(), spec(dir.path())).unwrap()), lines);
    }

    #[test]
    fn byte_order_not_locale() {
        let dir = tempfile::tempdir().unwrap();
        let lines = vec!["b", "B", "a", "\u{e9}", "A", "_", "1"];
        let out = collect(external_sort(lines, spec(dir.path())).unwrap());
        let text: Vec<String> = out.into_iter().map(|l| String::from_utf8(l).unwrap()).collect();
        assert_eq!(text, vec!["1", "A", "B", "_", "a", "b", "\u{e9}"]);
    }

    #[test]
    fn unstable_mode_keeps_input_order_for_equal_keys() {
        let dir = tempfile::tempdir().unwrap();
        let lines = vec!["k\tz", "j\t1", "k\ta", "k\tm"];
        let out = collect(external_sort(lines, spec(dir.path()).with_stable(false)).unwrap());
        assert_eq!(out, vec![b"j\t1".to_vec(), b"k\tz".to_vec(), b"k\ta".to_vec(), b"k\tm".to_vec()]);
    }

    #[test]
    fn spilled_sort_matches_in_memory_sort() {
        let dir = tempfile::tempdir().unwrap();
        let lines = random_lines(200_000, 7);
        for stable in [true, false] {
            // Force small chunks so the merge path and multi-pass merging run.
            let mut sorter = ExternalSorter::new(spec(dir.path()).with_stable(stable)).unwrap().with_chunk_limit(256 * 1024);
            for l in &lines {
                sorter.push_line(l).unwrap();
            }
            let sorted = sorter.finish().unwrap();
            let stats = sorted.stats();
            assert!(stats.runs > 16, "expected many runs, got {}", stats.runs);
            assert!(stats.merge_passes >= 2);
            assert_eq!(collect(sorted), oracle_sort(lines.clone(), stable));
        }
        // All runs are cleaned up once the stream is dropped.
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn codecs_and_parallelism_agree() {
        let dir = tempfile::tempdir().unwrap();
        let lines = random_lines(30_000, 11);
        let expected = oracle_sort(lines.clone(), true);
        for codec in [Codec::None, Codec::Zstd, Codec::Gzip] {
            for par in [Parallelism::SEQUENTIAL, Parallelism::threads(4)] {
                let mut sorter = ExternalSorter::new(spec(dir.path()).with_codec(codec).with_parallelism(par)).unwrap().with_chunk_limit(128 * 1024);
                for l in &lines {
                    sorter.push_line(l).unwrap();
                }
                assert_eq!(collect(sorter.finish().unwrap()), expected, "{codec} {par:?}");
            }
        }
    }

    #[test]
    fn newline_in_line_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut sorter = ExternalSorter::new(spec(dir.path())).unwrap();
        assert!(sorter.push_line(b"a\nb").is_err());
    }

    #[cfg(unix)]
    #[test]
    fn unwritable_tmp_dir_fails_cleanly() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let mut sorter = ExternalSorter::new(spec(dir.path())).unwrap().with_chunk_limit(64 * 1024);
        std::fs::set_permissions(dir.path(), std::fs::Permissions::from_mode(0o500)).unwrap();
        let writable = tempfile::tempfile_in(dir.path()).is_ok();
        let mut err = None;
        for l in random_lines(20_000, 3) {
            if let Err(e) = sorter.push_line(&l) {
                err = Some(e);
                break;
            }
        }
        std::fs::set_permissions(dir.path(), std::fs::Permissions::from_mode(0o700)).unwrap();
        if !writable {
            assert!(matches!(err, Some(Error::Spill { .. })), "{err:?}");
        }
        drop(sorter);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn sort_equals_oracle(lines in prop::collection::vec("[a-c\\t]{0,6}", 0..400), stable in any::<bool>()) {
            let dir = tempfile::tempdir().unwrap();
            let bytes: Vec<Vec<u8>> = lines.into_iter().map(String::into_bytes).collect();
            let mut sorter = ExternalSorter::new(spec(dir.path()).with_stable(stable)).unwrap().with_chunk_limit(2048);
            for l in &bytes {
                sorter.push_line(l).unwrap();
            }
            prop_assert_eq!(collect(sorter.finish().unwrap()), oracle_sort(bytes, stable));
        }
    }
}

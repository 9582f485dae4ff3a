//! Newline-delimited JSON artifacts, compressed by extension.

use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::codec::{self, ByteLines, Codec, Encoder};
use crate::error::{Error, Result};

/// Streams records of one JSONL file; a malformed line is an error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<impl Iterator<Item = Result<T>>> {
    let lines = codec::byte_lines(path)?;
    let display = path.display().to_string();
    Ok(lines.enumerate().filter_map(move |(i, line)| match line {
        Err(e) => Some(Err(Error::from(e))),
        Ok(l) if l.iter().all(u8::is_ascii_whitespace) => None,
        Ok(l) => Some(serde_json::from_slice(&l).map_err(|e| Error::Inconsistent(format!("{display}:{}: {e}", i + 1)))),
    }))
}

pub struct JsonlWriter {
    enc: Encoder,
    pub records: u64,
}

impl JsonlWriter {
    pub fn create(path: &Path, codec: Codec) -> Result<Self> {
        Ok(JsonlWriter { enc: codec::create(path, codec)?, records: 0 })
    }

    pub fn write<T: Serialize>(&mut self, rec: &T) -> Result<()> {
        serde_json::to_writer(&mut self.enc, rec)?;
        self.enc.write_all(b"\n")?;
        self.records += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<u64> {
        self.enc.finish()?;
        Ok(self.records)
    }
}

/// Adapts a fallible iterator for consumers that take plain items: iteration
/// stops at the first error, which is kept for [`Shunt::finish`].
pub struct Shunt<I> {
    inner: I,
    error: Option<Error>,
}

impl<I> Shunt<I> {
    pub fn new(inner: I) -> Self {
        Shunt { inner, error: None }
    }
}

impl<T, I: Iterator<Item = Result<T>>> Iterator for Shunt<I> {
    type Item = T;

    fn next(&mut self) -> Option<T> {
        if self.error.is_some() {
            return None;
        }
        match self.inner.next()? {
            Ok(t) => Some(t),
            Err(e) => {
                self.error = Some(e);
                None
            }
        }
    }
}

/// Runs `f` over the successful prefix of `iter`, then surfaces the first
/// error, if any.
pub fn with_shunt<T, I, R, F>(iter: I, f: F) -> Result<R>
where
    I: Iterator<Item = Result<T>>,
    F: FnOnce(&mut Shunt<I>) -> Result<R>,
{
    let mut s = Shunt::new(iter);
    let out = f(&mut s)?;
    match s.error {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Collects the first error of any number of guarded iterators, so streams
/// handed to consumers that take plain items can still fail the caller.
#[derive(Debug, Clone, Default)]
pub struct ErrorSlot(Arc<Mutex<Option<Error>>>);

impl ErrorSlot {
    pub fn new() -> Self {
        Self::default()
    }

    fn put(&self, e: Error) {
        let mut slot = self.0.lock().unwrap_or_else(|p| p.into_inner());
        slot.get_or_insert(e);
    }

    fn is_set(&self) -> bool {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).is_some()
    }

    /// Surfaces (and clears) the first recorded error.
    pub fn check(&self) -> Result<()> {
        match self.0.lock().unwrap_or_else(|p| p.into_inner()).take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Yields the successful prefix of `iter`; once any guarded stream has
    /// failed, every stream sharing this slot ends.
    pub fn guard<T, I>(&self, iter: I) -> impl Iterator<Item = T>
    where
        I: IntoIterator<Item = Result<T>>,
    {
        let slot = self.clone();
        let mut inner = iter.into_iter();
        std::iter::from_fn(move || {
            if slot.is_set() {
                return None;
            }
            match inner.next()? {
                Ok(t) => Some(t),
                Err(e) => {
                    slot.put(e);
                    None
                }
            }
        })
    }

    pub fn stream<T: DeserializeOwned>(&self, path: &Path) -> Result<impl Iterator<Item = T>> {
        Ok(self.guard(read_jsonl::<T>(path)?))
    }
}

/// Line iterator over a possibly compressed file.
pub fn lines(path: &Path) -> Result<ByteLines<Box<dyn std::io::BufRead + Send>>> {
    Ok(codec::byte_lines(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json.zst");
        let mut w = JsonlWriter::create(&path, Codec::Zstd).unwrap();
        w.write(&vec![1, 2]).unwrap();
        w.write(&vec![3]).unwrap();
        assert_eq!(w.finish().unwrap(), 2);
        let got: Vec<Vec<i32>> = read_jsonl(&path).unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(got, vec![vec![1, 2], vec![3]]);

        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, "[1]\nnope\n[2]\n").unwrap();
        let r = with_shunt(read_jsonl::<Vec<i32>>(&bad).unwrap(), |it| Ok(it.count()));
        assert!(r.is_err());

        let slot = ErrorSlot::new();
        let got: Vec<Vec<i32>> = slot.stream(&bad).unwrap().collect();
        assert_eq!(got, vec![vec![1]]);
        assert!(slot.check().is_err());
        assert!(slot.check().is_ok());
    }
}

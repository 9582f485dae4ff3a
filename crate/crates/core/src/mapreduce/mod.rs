//! Single-machine, external-memory map/sort/group engine.
//!
//! Records are mapped to `key<TAB>payload` lines, sorted byte-lexicographically
//! under a fixed memory budget (spilling sorted runs to disk and merging them
//! k-way), then grouped by key so a reducer sees each key's lines exactly once
//! and contiguously.

mod group;
mod join;
mod sort;
mod tsv;

use std::path::PathBuf;

pub use join::{dict_join, sorted_distinct, JoinStats};
pub use group::{group_reduce, par_group_reduce, Group, GroupOptions, GroupStats, Grouper};
pub use sort::{external_sort, ExternalSorter, SortStats, SortedLines};
pub use tsv::{
    escape_field, line_fields, line_key, map_to_tsv, par_map_to_tsv, unescape_field, LineSink, MapStats, TsvRow,
    WriteSink,
};

use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::par::Parallelism;

pub const MIB: u64 = 1024 * 1024;
pub const MIN_MEMORY_BUDGET: u64 = 64 * MIB;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortSpec {
    pub memory_budget: u64,
    pub tmp_dir: PathBuf,
    pub parallelism: Parallelism,
    /// Order equal keys by the full line instead of by input order.
    pub stable: bool,
    /// Compression for spilled runs.
    pub codec: Codec,
}

impl SortSpec {
    pub fn new(tmp_dir: impl Into<PathBuf>) -> Self {
        SortSpec {
            memory_budget: 256 * MIB,
            tmp_dir: tmp_dir.into(),
            parallelism: Parallelism::default(),
            stable: true,
            codec: Codec::Zstd,
        }
    }

    pub fn with_memory_budget(mut self, bytes: u64) -> Self {
        self.memory_budget = bytes;
        self
    }

    pub fn with_parallelism(mut self, par: Parallelism) -> Self {
        self.parallelism = par;
        self
    }

    pub fn with_stable(mut self, stable: bool) -> Self {
        self.stable = stable;
        self
    }

    pub fn with_codec(mut self, codec: Codec) -> Self {
        self.codec = codec;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.memory_budget < MIN_MEMORY_BUDGET {
            return Err(Error::SortSpec(format!(
                "memory budget {} below minimum {}",
                self.memory_budget, MIN_MEMORY_BUDGET
            )));
        }
        if !self.tmp_dir.is_dir() {
            return Err(Error::SortSpec(format!("tmp dir {} is not a directory", self.tmp_dir.display())));
        }
        tempfile::tempfile_in(&self.tmp_dir)
            .map_err(|e| Error::SortSpec(format!("tmp dir {} not writable: {e}", self.tmp_dir.display())))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        let dir = tempfile::tempdir().unwrap();
        assert!(SortSpec::new(dir.path()).with_memory_budget(MIN_MEMORY_BUDGET).validate().is_ok());
        assert!(SortSpec::new(dir.path()).with_memory_budget(MIN_MEMORY_BUDGET - 1).validate().is_err());
        assert!(SortSpec::new(dir.path().join("missing")).validate().is_err());
    }
}

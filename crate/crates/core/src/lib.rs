//! Citation graph derivation on a single machine.
//!
//! Catalog records and raw references go in; a deduplicated file of
//! citation edges ("biblioref" records) comes out. Identifier matches are
//! found by joining on normalized identifiers, the rest by grouping on title
//! slugs and running each candidate pair through a rule cascade. Both paths
//! share one external-memory map/sort/group engine ([`mapreduce`]).

pub mod codec;
pub mod compare;
pub mod error;
pub mod exactmatch;
pub mod extensions;
pub mod fuse;
pub mod fuzzy;
pub mod ingest;
pub mod jsonl;
pub mod mapreduce;
pub mod normalize;
pub mod par;
pub mod pipeline;
pub mod synth;
pub mod weblinks;

pub use error::{Error, Result};

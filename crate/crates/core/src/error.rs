use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid sort spec: {0}")]
    SortSpec(String),

    #[error("sort failed in {dir}: {source}")]
    Spill {
        dir: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("unknown task {0:?}")]
    UnknownTask(String),

    #[error("dependency cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("task {task} failed: {message}")]
    TaskFailed { task: String, message: String },

    #[error("arithmetic inconsistency: {0}")]
    Inconsistent(String),

    #[error("unknown codec {0:?}")]
    UnknownCodec(String),
}

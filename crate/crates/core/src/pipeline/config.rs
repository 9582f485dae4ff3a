//! TOML configuration. Relative paths resolve against the config file's
//! directory; `REFGRAPH_TMPDIR` and `REFGRAPH_WORKERS` override the file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::fuzzy::{VerifyConfig, DEFAULT_STOPLIST};
use crate::mapreduce::{SortSpec, MIN_MEMORY_BUDGET};
use crate::par::Parallelism;

pub const ENV_TMPDIR: &str = "REFGRAPH_TMPDIR";
pub const ENV_WORKERS: &str = "REFGRAPH_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub workdir: PathBuf,
    #[serde(default)]
    pub tmp_dir: Option<PathBuf>,
    /// Tasks run concurrently.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Threads per task; 0 means one per core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_budget", with = "byte_size")]
    pub memory_budget: u64,
    #[serde(default)]
    pub codec: Codec,
    pub inputs: Inputs,
    #[serde(default, rename = "match")]
    pub matching: MatchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub releases: PathBuf,
    pub refs: PathBuf,
    #[serde(default)]
    pub wikipedia: Option<PathBuf>,
    #[serde(default)]
    pub editions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchConfig {
    pub group_cap: usize,
    pub jaccard_strong: f64,
    pub jaccard_weak: f64,
    pub max_year_delta: i32,
    /// Added to the built-in slug stoplist.
    pub extra_stoplist: Vec<String>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        let v = VerifyConfig::default();
        MatchConfig {
            group_cap: crate::fuzzy::DEFAULT_GROUP_CAP,
            jaccard_strong: v.jaccard_strong,
            jaccard_weak: v.jaccard_weak,
            max_year_delta: v.max_year_delta,
            extra_stoplist: Vec::new(),
        }
    }
}

impl MatchConfig {
    pub fn verify_config(&self) -> VerifyConfig {
        let mut stoplist: BTreeSet<String> = DEFAULT_STOPLIST.iter().map(|s| s.to_string()).collect();
        stoplist.extend(self.extra_stoplist.iter().cloned());
        VerifyConfig { jaccard_strong: self.jaccard_strong, jaccard_weak: self.jaccard_weak, max_year_delta: self.max_year_delta, stoplist }
    }
}

fn default_workers() -> usize {
    2
}

fn default_budget() -> u64 {
    512 * 1024 * 1024
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Config::parse(&text)?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.workdir);
        if let Some(t) = &mut self.tmp_dir {
            fix(t);
        }
        fix(&mut self.inputs.releases);
        fix(&mut self.inputs.refs);
        if let Some(w) = &mut self.inputs.wikipedia {
            fix(w);
        }
        if let Some(e) = &mut self.inputs.editions {
            fix(e);
        }
    }

    pub fn apply_env<F: Fn(&str) -> Option<String>>(&mut self, get: F) -> Result<()> {
        if let Some(t) = get(ENV_TMPDIR).filter(|s| !s.is_empty()) {
            self.tmp_dir = Some(PathBuf::from(t));
        }
        if let Some(w) = get(ENV_WORKERS).filter(|s| !s.is_empty()) {
            self.workers = w.trim().parse().map_err(|_| Error::Config(format!("{ENV_WORKERS}={w:?} is not a count")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.memory_budget < MIN_MEMORY_BUDGET {
            return Err(Error::Config(format!("memory_budget {} is below the {} byte minimum", self.memory_budget, MIN_MEMORY_BUDGET)));
        }
        let m = &self.matching;
        if !(0.0..=1.0).contains(&m.jaccard_weak) || !(0.0..=1.0).contains(&m.jaccard_strong) || m.jaccard_weak > m.jaccard_strong {
            return Err(Error::Config("need 0 <= jaccard_weak <= jaccard_strong <= 1".into()));
        }
        if m.group_cap == 0 {
            return Err(Error::Config("group_cap must be positive".into()));
        }
        Ok(())
    }

    pub fn tmp_dir(&self) -> PathBuf {
        self.tmp_dir.clone().unwrap_or_else(|| self.workdir.join("tmp"))
    }

    pub fn parallelism(&self) -> Parallelism {
        if self.threads == 0 {
            Parallelism::available()
        } else {
            Parallelism::threads(self.threads)
        }
    }

    /// Stable sorting is always on: outputs must not depend on the budget or
    /// thread count.
    pub fn sort_spec(&self) -> SortSpec {
        SortSpec::new(self.tmp_dir())
            .with_memory_budget(self.memory_budget)
            .with_parallelism(self.parallelism())
            .with_stable(true)
            .with_codec(self.codec)
    }
}

/// Sizes like `512MiB`, `2GB`, `65536`.
pub fn parse_byte_size(s: &str) -> Result<u64> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit() && c != '.').unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let n: f64 = num.parse().map_err(|_| Error::Config(format!("bad size {s:?}")))?;
    let mult: u64 = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kb" => 1000,
        "kib" => 1 << 10,
        "m" | "mb" => 1_000_000,
        "mib" => 1 << 20,
        "g" | "gb" => 1_000_000_000,
        "gib" => 1 << 30,
        other => return Err(Error::Config(format!("unknown size unit {other:?}"))),
    };
    Ok((n * mult as f64) as u64)
}

mod byte_size {
    use serde::{de, Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(u64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(*v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Int(n) => Ok(n),
            Raw::Text(t) => super::parse_byte_size(&t).map_err(de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
workdir = "work"
workers = 3
memory_budget = "128MiB"
codec = "gzip"

[inputs]
releases = "data/releases.json.zst"
refs = "/abs/refs.json"

[match]
jaccard_strong = 0.6
extra_stoplist = ["foreword"]
"#;

    #[test]
    fn parses_and_resolves() {
        let mut c = Config::parse(SAMPLE).unwrap();
        c.resolve_paths(Path::new("/etc/rg"));
        assert_eq!(c.workdir, PathBuf::from("/etc/rg/work"));
        assert_eq!(c.inputs.releases, PathBuf::from("/etc/rg/data/releases.json.zst"));
        assert_eq!(c.inputs.refs, PathBuf::from("/abs/refs.json"));
        assert_eq!(c.memory_budget, 128 << 20);
        assert_eq!(c.codec, Codec::Gzip);
        assert_eq!(c.matching.jaccard_strong, 0.6);
        assert_eq!(c.matching.jaccard_weak, 0.2);
        assert!(c.matching.verify_config().stoplist.contains("foreword"));
        assert_eq!(c.tmp_dir(), PathBuf::from("/etc/rg/work/tmp"));
        c.validate().unwrap();
    }

    #[test]
    fn env_overrides() {
        let mut c = Config::parse(SAMPLE).unwrap();
        c.apply_env(|k| match k {
            ENV_TMPDIR => Some("/scratch".into()),
            ENV_WORKERS => Some("7".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!((c.tmp_dir(), c.workers), (PathBuf::from("/scratch"), 7));
        assert!(c.apply_env(|k| (k == ENV_WORKERS).then(|| "many".to_string())).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::parse(&SAMPLE.replace("workers = 3", "wrokers = 3")).is_err());
        let c = Config::parse(&SAMPLE.replace("128MiB", "1MiB")).unwrap();
        assert!(c.validate().is_err());
        let c = Config::parse(&SAMPLE.replace("0.6", "0.1")).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn sizes() {
        assert_eq!(parse_byte_size("64MiB").unwrap(), 64 << 20);
        assert_eq!(parse_byte_size("1.5 GiB").unwrap(), 3 << 29);
        assert_eq!(parse_byte_size("1000").unwrap(), 1000);
        assert!(parse_byte_size("12 parsecs").is_err());
    }
}

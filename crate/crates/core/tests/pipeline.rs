use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use refgraph::fuse::BiblioRef;
use refgraph::jsonl::read_jsonl;
use refgraph::pipeline::config::Config;
use refgraph::pipeline::tasks::{self, build_graph};
use refgraph::pipeline::{hash_file, TaskStatus};
use refgraph::synth::{SynthConfig, SynthCorpus};

fn config(dir: &Path, data: &Path, work: &str) -> Config {
    let text = format!(
        r#"
workdir = "{work}"
workers = 3
threads = 2
memory_budget = "64MiB"

[inputs]
releases = "{d}/releases.json"
refs = "{d}/refs.json"
wikipedia = "{d}/wikipedia.json"
editions = "{d}/editions.json"
"#,
        d = data.display()
    );
    let mut c = Config::parse(&text).unwrap();
    c.resolve_paths(dir);
    c.validate().unwrap();
    c
}

fn small_corpus(dir: &Path) -> SynthCorpus {
    let corpus = SynthCorpus::generate(&SynthConfig { releases: 800, refs: 4000, wikipedia_rows: 300, editions: 200, seed: 11 });
    corpus.write(dir).unwrap();
    corpus
}

#[test]
fn full_run_is_complete_idempotent_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let corpus = small_corpus(&data);

    let cfg = config(dir.path(), &data, "w1");
    let g = build_graph(&cfg);
    let plan = g.plan(tasks::ALL).unwrap();
    let names: Vec<_> = plan.iter().map(|p| p.name.as_str()).collect();
    for t in [tasks::REFS_ENRICHED, tasks::BREFS, tasks::MATCH_STATS, tasks::DOI_EDGES, tasks::WIKIPEDIA_EDGES, tasks::OPENLIBRARY_EDGES, tasks::ALL] {
        assert!(names.contains(&t), "{t} missing from {names:?}");
    }
    assert_eq!(names.last(), Some(&tasks::ALL));
    let report = g.run(&plan, cfg.workers).unwrap();
    assert!(report.ok, "{:?}", report.tasks.iter().map(|t| (&t.name, &t.status)).collect::<Vec<_>>());
    assert!(report.tasks.iter().all(|t| t.status == TaskStatus::Ok));

    // Nothing left to do.
    assert!(build_graph(&cfg).plan(tasks::ALL).unwrap().is_empty());

    // One record per accepted reference, sorted by edge key.
    let brefs: Vec<BiblioRef> = read_jsonl(&g.output_path(tasks::BREFS).unwrap()).unwrap().collect::<Result<_, _>>().unwrap();
    let keys: Vec<&str> = brefs.iter().map(|b| b.edge_key.as_str()).collect();
    let unique: HashSet<&str> = keys.iter().copied().collect();
    assert_eq!(unique.len(), keys.len());
    assert!(keys.windows(2).all(|w| w[0] < w[1]));
    let expected: HashSet<String> = corpus.refs.iter().map(|r| format!("{}_{}", r.source_ident, r.ref_index)).collect();
    assert_eq!(unique, expected.iter().map(String::as_str).collect());
    assert!(brefs.iter().any(|b| b.is_matched()));

    let edge_types = std::fs::read_to_string(g.output_path(tasks::EDGE_TYPES).unwrap()).unwrap();
    let rows: BTreeMap<&str, u64> = edge_types.lines().skip(1).filter_map(|l| l.split_once('\t')).map(|(k, v)| (k, v.parse().unwrap())).collect();
    assert!(rows["doi-doi"] > 0 && rows["source-wikipedia"] > 0 && rows["target-open-library"] > 0);
    assert!(rows["target-open-library-works"] <= rows["target-open-library"]);
    assert_eq!(rows["total"], rows["doi-doi"] + rows["source-wikipedia"] + rows["target-open-library"] + rows["target-url"]);

    // A second workdir reproduces every artifact byte for byte.
    let cfg2 = config(dir.path(), &data, "w2");
    let g2 = build_graph(&cfg2);
    assert!(g2.run(&g2.plan(tasks::ALL).unwrap(), 1).unwrap().ok);
    for t in [tasks::BREFS, tasks::MATCH_STATS, tasks::DOI_EDGES, tasks::EDGE_TYPES, tasks::ALL] {
        let (a, b) = (g.output_path(t).unwrap(), g2.output_path(t).unwrap());
        assert_eq!(a.file_name(), b.file_name());
        assert_eq!(hash_file(&a).unwrap(), hash_file(&b).unwrap(), "{t}");
    }
}

#[test]
fn changed_threshold_replans_fuzzy_branch_only() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small_corpus(&data);
    let cfg = config(dir.path(), &data, "w");
    let g = build_graph(&cfg);
    assert!(g.run(&g.plan(tasks::BREFS).unwrap(), 2).unwrap().ok);

    let mut cfg2 = cfg.clone();
    cfg2.matching.jaccard_strong = 0.7;
    let plan: Vec<String> = build_graph(&cfg2).plan(tasks::BREFS).unwrap().into_iter().map(|p| p.name).collect();
    assert_eq!(plan, vec![tasks::FUZZY_EDGES, tasks::BREFS]);

    // The memory budget never changes outputs, so it never invalidates them.
    let mut cfg3 = cfg.clone();
    cfg3.memory_budget *= 2;
    assert!(build_graph(&cfg3).plan(tasks::BREFS).unwrap().is_empty());
}

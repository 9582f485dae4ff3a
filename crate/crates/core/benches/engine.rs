// Sequential vs data-parallel for the three hot paths: run sorting, key
// extraction and per-pair verification. `Parallelism::SEQUENTIAL` is the same
// code path a `--no-default-features` build takes.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use refgraph::exactmatch::extract_ref_keys;
use refgraph::fuzzy::{verify_with, Features, VerifyConfig};
use refgraph::ingest::{parse_raw_reference, parse_release, RawReference};
use refgraph::mapreduce::{external_sort, par_map_to_tsv, SortSpec};
use refgraph::par::{self, Parallelism};
use refgraph::synth::{SynthConfig, SynthCorpus};

fn modes() -> [(&'static str, Parallelism); 2] {
    [("sequential", Parallelism::SEQUENTIAL), ("parallel", Parallelism::available())]
}

fn random_lines(n: usize) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n).map(|_| format!("k{:08}\tpayload-{}", rng.random_range(0..n as u64 / 4), rng.random::<u64>()).into_bytes()).collect()
}

fn sort_bench(c: &mut Criterion) {
    let lines = random_lines(300_000);
    let dir = tempfile::tempdir().unwrap();
    let mut g = c.benchmark_group("external_sort");
    g.throughput(Throughput::Elements(lines.len() as u64));
    g.sample_size(10);
    for (name, p) in modes() {
        // The minimum budget forces several spilled runs.
        let spec = SortSpec::new(dir.path()).with_parallelism(p).with_stable(true).with_memory_budget(refgraph::mapreduce::MIN_MEMORY_BUDGET);
        g.bench_with_input(BenchmarkId::from_parameter(name), &spec, |b, spec| {
            b.iter(|| external_sort(lines.iter(), spec.clone()).unwrap().count())
        });
    }
    g.finish();
}

fn corpus() -> SynthCorpus {
    SynthCorpus::generate(&SynthConfig { releases: 5_000, refs: 40_000, wikipedia_rows: 0, editions: 0, seed: 5 })
}

fn keying_bench(c: &mut Criterion) {
    let refs: Vec<RawReference> = corpus().refs.iter().map(|r| parse_raw_reference(&r.json).unwrap()).collect();
    let mut g = c.benchmark_group("key_extraction");
    g.throughput(Throughput::Elements(refs.len() as u64));
    for (name, p) in modes() {
        g.bench_function(name, |b| {
            b.iter(|| {
                let mut sink: Vec<Vec<u8>> = Vec::new();
                par_map_to_tsv(refs.iter(), p, |r| extract_ref_keys(r).iter().map(|d| d.to_row()).collect(), &mut sink, |_| {}).unwrap();
                sink.len()
            })
        });
    }
    g.finish();
}

fn verify_bench(c: &mut Criterion) {
    let corpus = corpus();
    let releases: Vec<_> = corpus.releases.iter().map(|r| Features::of(&parse_release(&r.json).unwrap())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pairs: Vec<(usize, usize)> = (0..50_000).map(|_| (rng.random_range(0..releases.len()), rng.random_range(0..releases.len()))).collect();
    let cfg = VerifyConfig::default();
    let mut g = c.benchmark_group("verify_pairs");
    g.throughput(Throughput::Elements(pairs.len() as u64));
    for (name, p) in modes() {
        g.bench_function(name, |b| b.iter(|| par::map(&pairs, p, |&(i, j)| verify_with(&releases[i], &releases[j], &cfg).status).len()));
    }
    g.finish();
}

criterion_group!(benches, sort_bench, keying_bench, verify_bench);
criterion_main!(benches);

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use refgraph::codec::{self, Codec};
use refgraph::compare::{self, EdgeCsvFormat, EdgeSetReport, PrefixCounter, TOP_PREFIXES};
use refgraph::extensions::TypedEdge;
use refgraph::fuse::parse_match_stats;
use refgraph::fuzzy::{load_labeled_pairs, run_regression, VerifyConfig};
use refgraph::jsonl::read_jsonl;
use refgraph::mapreduce::{self, line_key, par_group_reduce, GroupOptions, LineSink, SortSpec};
use refgraph::par::Parallelism;
use refgraph::pipeline::config::{parse_byte_size, Config, ENV_TMPDIR};
use refgraph::pipeline::tasks::{self, build_graph};
use refgraph::pipeline::{read_meta, unix_seconds, TaskStatus};
use refgraph::synth::{SynthConfig, SynthCorpus};
use refgraph::weblinks::{self, AuditOptions, CdxConfig, FixtureTransport, LiveConfig, Transport, UreqTransport};

#[derive(Parser)]
#[command(name = "refgraph", version, about = "Derive, inspect and audit citation graphs")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(short, long, global = true, default_value = "refgraph.toml", env = "REFGRAPH_CONFIG")]
    config: PathBuf,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the stale tasks needed for a target.
    Plan {
        #[arg(default_value = tasks::ALL)]
        target: String,
    },
    /// Run the stale tasks needed for a target.
    Run {
        #[arg(default_value = tasks::ALL)]
        target: String,
        /// Concurrent tasks (overrides config and environment).
        #[arg(long)]
        workers: Option<usize>,
        /// Where to write the run report; defaults to the workdir.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print match counts, edge-type counts and ingest rejects of a finished run.
    Stats {
        /// Rows of the match table to show.
        #[arg(long, default_value_t = 25)]
        top: usize,
    },
    /// Compare two DOI-to-DOI edge sets, or check the arithmetic of given counts.
    Compare(CompareArgs),
    /// Archive coverage and live status of reference URLs.
    Weblinks(WeblinksArgs),
    /// Externally sort a line file under a memory budget.
    Sort(SortArgs),
    /// Run a labeled pair file through the verification cascade.
    Verify { file: PathBuf },
    /// Write a synthetic corpus with known ground truth.
    Synth(SynthArgs),
}

#[derive(Args)]
struct CompareArgs {
    /// Edge set C (CSV).
    #[arg(long, required_unless_present = "counts")]
    c: Option<PathBuf>,
    /// Edge set R (CSV).
    #[arg(long, required_unless_present = "counts")]
    r: Option<PathBuf>,
    /// |C| |R| |C ∩ R| instead of files.
    #[arg(long, num_args = 3, value_names = ["SIZE_C", "SIZE_R", "OVERLAP"], conflicts_with_all = ["c", "r"])]
    counts: Option<Vec<u64>>,
    #[arg(long, default_value = "citing")]
    citing_column: String,
    #[arg(long, default_value = "cited")]
    cited_column: String,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// DOI prefix to break the R-only edges down by.
    #[arg(long)]
    prefix: Option<String>,
    /// Also write the R-only edges here (CSV).
    #[arg(long)]
    only_r_out: Option<PathBuf>,
    #[arg(long, env = ENV_TMPDIR)]
    tmp_dir: Option<PathBuf>,
    #[arg(long, default_value = "512MiB", value_parser = byte_size)]
    memory_budget: u64,
}

#[derive(Args)]
struct WeblinksArgs {
    /// URL list: `.tsv` with source and url columns, or typed-edge JSONL.
    /// Defaults to the pipeline's url_edges output.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Replay recorded responses instead of using the network.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Requests per second, both to the archive and to each live host.
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Live-check this many sampled URLs.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Only audit the first N URLs.
    #[arg(long)]
    limit: Option<usize>,
    /// Fixed check timestamp (RFC 3339) for reproducible output.
    #[arg(long)]
    checked_at: Option<String>,
    #[arg(long)]
    cdx_endpoint: Option<String>,
    /// Per-URL audit records (JSONL); the report goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SortArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long, default_value = "512MiB", value_parser = byte_size)]
    memory_budget: u64,
    #[arg(long, env = ENV_TMPDIR)]
    tmp_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Codec for spilled runs.
    #[arg(long, default_value = "zstd")]
    spill_codec: Codec,
    /// Write one line per key group (`key`, count, then the group's lines)
    /// instead of the sorted lines.
    #[arg(long)]
    group: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    releases: usize,
    #[arg(long, default_value_t = 50_000)]
    refs: usize,
    #[arg(long, default_value_t = 2_000)]
    wikipedia: usize,
    #[arg(long, default_value_t = 2_000)]
    editions: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn byte_size(s: &str) -> Result<u64, String> {
    parse_byte_size(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("event=fatal error={:?}", format!("{e:#}"));
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("REFGRAPH_LOG")
        .format(|buf, record| {
            writeln!(buf, "ts={} level={} module={} {}", buf.timestamp_millis(), record.level().as_str().to_lowercase(), record.target(), record.args())
        })
        .init();
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Plan { target } => plan(&cli.config, &target),
        Command::Run { target, workers, report } => run(&cli.config, &target, workers, report),
        Command::Stats { top } => stats(&cli.config, top),
        Command::Compare(args) => compare(args),
        Command::Weblinks(args) => weblinks(&cli.config, args),
        Command::Sort(args) => sort(args),
        Command::Verify { file } => verify(&file),
        Command::Synth(args) => synth(args),
    }
}

fn load_config(path: &Path) -> Result<Config> {
    Config::load(path).with_context(|| format!("loading {}", path.display()))
}

fn plan(config: &Path, target: &str) -> Result<ExitCode> {
    let cfg = load_config(config)?;
    let g = build_graph(&cfg);
    let plan = g.plan(target)?;
    let mut out = io::stdout().lock();
    if plan.is_empty() {
        writeln!(out, "{target} is up to date")?;
    }
    for p in plan {
        writeln!(out, "{}\t{}\t{}", p.name, &p.fingerprint[..16], p.output.display())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run(config: &Path, target: &str, workers: Option<usize>, report_path: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = load_config(config)?;
    let g = build_graph(&cfg);
    let plan = g.plan(target)?;
    if plan.is_empty() {
        log::info!("event=up_to_date target={target}");
        return Ok(ExitCode::SUCCESS);
    }
    let report = g.run(&plan, workers.unwrap_or(cfg.workers))?;
    let path = report_path.unwrap_or_else(|| cfg.workdir.join("reports").join(format!("run-{}.json", unix_seconds())));
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(&path, serde_json::to_vec_pretty(&report)?)?;
    let mut out = io::stdout().lock();
    for t in &report.tasks {
        let state = match &t.status {
            TaskStatus::Ok => "ok".to_string(),
            TaskStatus::Failed(e) => format!("failed: {e}"),
            TaskStatus::Skipped => "skipped".to_string(),
        };
        writeln!(out, "{:<20} {:>8} ms {:>12} records  {state}", t.name, t.wall_ms, t.metrics.records)?;
    }
    writeln!(out, "report: {}", path.display())?;
    Ok(if report.ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn fresh_output(g: &refgraph::pipeline::Graph, name: &str) -> Result<PathBuf> {
    let path = g.output_path(name)?;
    if !path.exists() {
        bail!("{name} has not been built; run `refgraph run {name}` first");
    }
    Ok(path)
}

fn stats(config: &Path, top: usize) -> Result<ExitCode> {
    let cfg = load_config(config)?;
    let g = build_graph(&cfg);
    let mut out = io::stdout().lock();

    for input in [tasks::REFS_ENRICHED, tasks::RELEASES_ENRICHED, tasks::WIKIPEDIA_ENRICHED, tasks::EDITIONS_ENRICHED] {
        if g.spec(input).is_err() {
            continue;
        }
        if let Ok(path) = fresh_output(&g, input) {
            let m = read_meta(&path)?;
            let rejected: u64 = m.rejects.values().sum();
            writeln!(out, "{input}: {} accepted, {rejected} rejected {:?}", m.records, m.rejects)?;
        }
    }

    let table = fs::read_to_string(fresh_output(&g, tasks::MATCH_STATS)?)?;
    let rows = parse_match_stats(&table)?;
    let total: u64 = rows.iter().map(|r| r.count).sum();
    writeln!(out, "\nmatch counts (top {top} of {}, {total} references)", rows.len())?;
    writeln!(out, "{:>12}  {:<16} {:<10} reason", "count", "provenance", "status")?;
    for r in rows.iter().take(top) {
        writeln!(out, "{:>12}  {:<16} {:<10} {}", r.count, r.provenance, r.status.as_str(), r.reason)?;
    }

    if let Ok(path) = fresh_output(&g, tasks::EDGE_TYPES) {
        writeln!(out, "\nedges by type")?;
        for line in fs::read_to_string(path)?.lines().skip(1) {
            let (k, v) = line.split_once('\t').unwrap_or((line, ""));
            writeln!(out, "{k:<28} {v:>12}")?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn compare(args: CompareArgs) -> Result<ExitCode> {
    let mut out = io::stdout().lock();
    if let Some(c) = &args.counts {
        let report = EdgeSetReport::from_counts(c[0], c[1], c[2])?;
        report.check()?;
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
        return Ok(ExitCode::SUCCESS);
    }
    let (Some(c), Some(r)) = (&args.c, &args.r) else { bail!("--c and --r are required") };
    let delimiter = u8::try_from(args.delimiter).context("delimiter must be a single byte")?;
    let fmt = EdgeCsvFormat { citing: args.citing_column.clone(), cited: args.cited_column.clone(), delimiter };
    let tmp = args.tmp_dir.clone().unwrap_or_else(std::env::temp_dir);
    let spec = SortSpec::new(tmp).with_memory_budget(args.memory_budget);

    let mut prefix = args.prefix.as_deref().map(PrefixCounter::new);
    let mut only_r_out = match &args.only_r_out {
        Some(p) => {
            let mut w = csv::Writer::from_writer(codec::create(p, Codec::from_path(p))?);
            w.write_record([&fmt.citing, &fmt.cited])?;
            Some(w)
        }
        None => None,
    };
    let report = compare::compare_edge_sets(compare::read_edge_csv(c, &fmt)?, compare::read_edge_csv(r, &fmt)?, &spec, |a, b| {
        if let Some(p) = &mut prefix {
            p.add(a, b);
        }
        if let Some(w) = &mut only_r_out {
            w.write_record([a, b])?;
        }
        Ok(())
    })?;
    if let Some(w) = only_r_out {
        w.into_inner().map_err(|e| e.into_error())?.finish()?;
    }
    let mut doc = serde_json::json!({ "report": report });
    if let Some(p) = prefix {
        let b = p.finish();
        doc["prefix"] = serde_json::json!({
            "breakdown": &b,
            "either_fraction": b.either_fraction(),
            "both_fraction": b.both_fraction(),
            "top_n": TOP_PREFIXES,
        });
    }
    writeln!(out, "{}", serde_json::to_string_pretty(&doc)?)?;
    Ok(ExitCode::SUCCESS)
}

fn read_url_list(path: &Path) -> Result<Vec<(String, String)>> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    if name.contains(".tsv") {
        let mut links = Vec::new();
        for line in codec::byte_lines(path)? {
            let line = String::from_utf8(line?).context("url list is not UTF-8")?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('\t') {
                Some((s, u)) => links.push((s.to_string(), u.trim().to_string())),
                None => links.push((String::new(), line.trim().to_string())),
            }
        }
        return Ok(links);
    }
    read_jsonl::<TypedEdge>(path)?.map(|e| e.map(|e| (e.source, e.target)).map_err(Into::into)).collect()
}

fn weblinks(config: &Path, args: WeblinksArgs) -> Result<ExitCode> {
    if args.rate <= 0.0 {
        bail!("--rate must be positive");
    }
    let input = match &args.input {
        Some(p) => p.clone(),
        None => fresh_output(&build_graph(&load_config(config)?), tasks::URL_EDGES)?,
    };
    let mut links = read_url_list(&input)?;
    if let Some(n) = args.limit {
        links.truncate(n);
    }
    let transport: Box<dyn Transport> = match &args.fixtures {
        Some(f) => Box::new(FixtureTransport::load(f)?),
        None => Box::new(UreqTransport::new(Duration::from_secs_f64(args.timeout))),
    };
    let mut cdx = CdxConfig::default();
    if let Some(e) = &args.cdx_endpoint {
        cdx.endpoint = e.clone();
    }
    if args.fixtures.is_some() {
        cdx.backoff = Duration::ZERO;
    }
    let delay = if args.fixtures.is_some() { Duration::ZERO } else { Duration::from_secs_f64(1.0 / args.rate) };
    let opts = AuditOptions {
        cdx,
        workers: args.workers,
        cdx_delay: delay,
        live_sample: args.sample,
        live: LiveConfig { per_host_delay: delay, workers: args.workers.max(1) },
        seed: args.seed,
        checked_at: match &args.checked_at {
            Some(s) => Some(chrono::DateTime::parse_from_rfc3339(s).context("--checked-at")?.with_timezone(&chrono::Utc)),
            None => None,
        },
    };
    log::info!("event=audit_start urls={} live_sample={:?}", links.len(), args.sample);
    let audits = weblinks::audit(transport.as_ref(), &links, &opts);
    if let Some(p) = &args.out {
        let mut w = BufWriter::new(fs::File::create(p)?);
        for a in &audits {
            serde_json::to_writer(&mut w, a)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    let report = weblinks::coverage_report(&audits);
    writeln!(io::stdout().lock(), "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(ExitCode::SUCCESS)
}

/// Group writer for `sort --group`.
struct GroupLine(Vec<u8>);

fn sort(args: SortArgs) -> Result<ExitCode> {
    let tmp = args.tmp_dir.clone().unwrap_or_else(std::env::temp_dir);
    let par = if args.threads == 0 { Parallelism::available() } else { Parallelism::threads(args.threads) };
    let spec = SortSpec::new(tmp).with_memory_budget(args.memory_budget).with_parallelism(par).with_stable(true).with_codec(args.spill_codec);
    let lines = codec::byte_lines(&args.input)?.map(|l| l.map_err(refgraph::Error::from));
    let mut sorter = mapreduce::ExternalSorter::new(spec)?;
    for l in lines {
        sorter.push_line(&l?)?;
    }
    let sorted = sorter.finish()?;
    let st = sorted.stats();
    let mut out = codec::create(&args.output, Codec::from_path(&args.output))?;
    if args.group {
        let opts = GroupOptions::default().with_parallelism(par);
        let g = par_group_reduce(
            sorted,
            opts,
            |key, lines| {
                let mut row = key.to_vec();
                row.extend_from_slice(format!("\t{}", lines.len()).as_bytes());
                for l in lines {
                    row.push(b'\t');
                    row.extend_from_slice(l[line_key(l).len()..].strip_prefix(b"\t").unwrap_or_default());
                }
                Ok::<_, String>(GroupLine(row))
            },
            |GroupLine(row)| {
                out.write_all(&row)?;
                out.write_all(b"\n")?;
                Ok(())
            },
        )?;
        log::info!("event=grouped groups={} lines={}", g.groups, g.lines);
    } else {
        for l in sorted {
            out.write_all(&l?)?;
            out.write_all(b"\n")?;
        }
    }
    out.finish()?;
    log::info!("event=sorted lines={} runs={} merge_passes={}", st.lines, st.runs, st.merge_passes);
    Ok(ExitCode::SUCCESS)
}

fn verify(file: &Path) -> Result<ExitCode> {
    let pairs = load_labeled_pairs(file)?;
    let report = run_regression(&pairs, &VerifyConfig::default());
    let mut out = io::stdout().lock();
    for f in &report.failures {
        writeln!(
            out,
            "line {}: expected {}{} got {}/{}{}",
            f.line,
            f.expected_status,
            f.expected_reason.map(|r| format!("/{r}")).unwrap_or_default(),
            f.got.status,
            f.got.reason,
            if f.asymmetric { " (asymmetric)" } else { "" }
        )?;
    }
    let coverage: BTreeMap<_, _> = report.coverage.iter().map(|(k, (p, n))| (k.as_str(), format!("+{p}/-{n}"))).collect();
    writeln!(out, "{} of {} pairs agree ({:.1}%)", report.agreed, report.total, 100.0 * report.agreement())?;
    writeln!(out, "coverage: {coverage:?}")?;
    Ok(if report.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn synth(args: SynthArgs) -> Result<ExitCode> {
    let cfg = SynthConfig { releases: args.releases, refs: args.refs, wikipedia_rows: args.wikipedia, editions: args.editions, seed: args.seed };
    let corpus = SynthCorpus::generate(&cfg);
    let paths = corpus.write(&args.out)?;
    log::info!(
        "event=synth releases={} refs={} wikipedia={} editions={} dir={}",
        corpus.releases.len(),
        corpus.refs.len(),
        corpus.wikipedia.len(),
        corpus.editions.len(),
        args.out.display()
    );
    let config = format!(
        "workdir = \"work\"\n\n[inputs]\nreleases = {:?}\nrefs = {:?}\nwikipedia = {:?}\neditions = {:?}\n",
        file_name(&paths.releases),
        file_name(&paths.refs),
        file_name(&paths.wikipedia),
        file_name(&paths.editions)
    );
    let cfg_path = args.out.join("refgraph.toml");
    if !cfg_path.exists() {
        fs::write(&cfg_path, config)?;
        println!("wrote {}", cfg_path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

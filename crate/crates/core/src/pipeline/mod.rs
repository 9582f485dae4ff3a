//! A small task DAG with content-addressed outputs.
//!
//! Every task's output path embeds a fingerprint over its name, parameters,
//! external input contents and upstream fingerprints. A task is stale exactly
//! when that path does not exist, so changing anything upstream replans
//! everything downstream and an unchanged rerun does nothing.

pub mod config;
pub mod tasks;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Short fingerprint prefix used in file names.
const FP_CHARS: usize = 16;
const META_SUFFIX: &str = ".meta.json";
const HASH_CACHE: &str = ".input-hashes.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    /// Upstream tasks whose outputs this task reads.
    pub deps: Vec<String>,
    /// External files (never produced by a task).
    pub inputs: Vec<PathBuf>,
    pub params: BTreeMap<String, String>,
    /// Output file extension, e.g. `json.zst`.
    pub ext: String,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, ext: impl Into<String>) -> Self {
        TaskSpec { name: name.into(), deps: Vec::new(), inputs: Vec::new(), params: BTreeMap::new(), ext: ext.into() }
    }

    pub fn dep(mut self, name: impl Into<String>) -> Self {
        self.deps.push(name.into());
        self
    }

    pub fn input(mut self, path: impl Into<PathBuf>) -> Self {
        self.inputs.push(path.into());
        self
    }

    pub fn param(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.params.insert(key.into(), value.to_string());
        self
    }
}

/// What a running task gets to see.
pub struct TaskCtx<'a> {
    pub spec: &'a TaskSpec,
    /// Where to write; renamed into place on success.
    pub output: PathBuf,
    /// Output paths of `spec.deps`, by task name.
    pub deps: BTreeMap<String, PathBuf>,
    pub scratch: PathBuf,
}

impl TaskCtx<'_> {
    pub fn dep(&self, name: &str) -> Result<&Path> {
        self.deps.get(name).map(PathBuf::as_path).ok_or_else(|| Error::UnknownTask(name.to_string()))
    }

    /// Metrics an upstream task recorded next to its output.
    pub fn dep_metrics(&self, name: &str) -> Result<TaskMetrics> {
        read_meta(self.dep(name)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub records: u64,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub rejects: BTreeMap<String, u64>,
    /// Task-specific counters.
    #[serde(skip_serializing_if = "serde_json::Value::is_null", default)]
    pub details: serde_json::Value,
}

pub type TaskFn = Arc<dyn Fn(&TaskCtx) -> Result<TaskMetrics> + Send + Sync>;

struct Task {
    spec: TaskSpec,
    run: TaskFn,
}

pub struct Graph {
    workdir: PathBuf,
    scratch: PathBuf,
    salt: String,
    tasks: BTreeMap<String, Task>,
    fingerprints: Mutex<HashMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedTask {
    pub name: String,
    pub fingerprint: String,
    pub output: PathBuf,
}

impl Graph {
    /// `salt` is mixed into every fingerprint; the crate version goes here so
    /// a new build never reuses old outputs.
    pub fn new(workdir: impl Into<PathBuf>, scratch: impl Into<PathBuf>, salt: impl Into<String>) -> Self {
        Graph {
            workdir: workdir.into(),
            scratch: scratch.into(),
            salt: salt.into(),
            tasks: BTreeMap::new(),
            fingerprints: Mutex::new(HashMap::new()),
        }
    }

    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    pub fn register<F>(&mut self, spec: TaskSpec, run: F)
    where
        F: Fn(&TaskCtx) -> Result<TaskMetrics> + Send + Sync + 'static,
    {
        self.fingerprints.lock().unwrap_or_else(|e| e.into_inner()).clear();
        self.tasks.insert(spec.name.clone(), Task { spec, run: Arc::new(run) });
    }

    pub fn task_names(&self) -> impl Iterator<Item = &str> {
        self.tasks.keys().map(String::as_str)
    }

    pub fn spec(&self, name: &str) -> Result<&TaskSpec> {
        self.tasks.get(name).map(|t| &t.spec).ok_or_else(|| Error::UnknownTask(name.to_string()))
    }

    /// `target` and everything it depends on, dependencies first. Each task
    /// appears once; siblings keep their declared order.
    pub fn closure(&self, target: &str) -> Result<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Active,
            Done,
        }
        fn visit(g: &Graph, name: &str, marks: &mut HashMap<String, Mark>, stack: &mut Vec<String>, out: &mut Vec<String>) -> Result<()> {
            match marks.get(name) {
                Some(Mark::Done) => return Ok(()),
                Some(Mark::Active) => {
                    let start = stack.iter().position(|n| n == name).unwrap_or(0);
                    let mut cycle = stack[start..].to_vec();
                    cycle.push(name.to_string());
                    return Err(Error::Cycle(cycle));
                }
                None => {}
            }
            let spec = g.spec(name)?;
            marks.insert(name.to_string(), Mark::Active);
            stack.push(name.to_string());
            for dep in &spec.deps {
                visit(g, dep, marks, stack, out)?;
            }
            stack.pop();
            marks.insert(name.to_string(), Mark::Done);
            out.push(name.to_string());
            Ok(())
        }
        let mut out = Vec::new();
        visit(self, target, &mut HashMap::new(), &mut Vec::new(), &mut out)?;
        Ok(out)
    }

    pub fn fingerprint(&self, name: &str) -> Result<String> {
        if let Some(fp) = self.fingerprints.lock().unwrap_or_else(|e| e.into_inner()).get(name) {
            return Ok(fp.clone());
        }
        let order = self.closure(name)?;
        let mut cache = HashCache::load(&self.workdir);
        for n in &order {
            if self.fingerprints.lock().unwrap_or_else(|e| e.into_inner()).contains_key(n) {
                continue;
            }
            let spec = self.spec(n)?;
            let mut h = Sha256::new();
            let mut field = |k: &str, v: &str| {
                h.update((k.len() as u64).to_le_bytes());
                h.update(k.as_bytes());
                h.update((v.len() as u64).to_le_bytes());
                h.update(v.as_bytes());
            };
            field("salt", &self.salt);
            field("name", &spec.name);
            field("ext", &spec.ext);
            for (k, v) in &spec.params {
                field(&format!("param:{k}"), v);
            }
            for input in &spec.inputs {
                // Identity is the content, not the path.
                field("input", &cache.content_hash(input)?);
            }
            for dep in &spec.deps {
                let fp = self.fingerprints.lock().unwrap_or_else(|e| e.into_inner())[dep].clone();
                field(&format!("dep:{dep}"), &fp);
            }
            let fp = hex::encode(h.finalize());
            self.fingerprints.lock().unwrap_or_else(|e| e.into_inner()).insert(n.clone(), fp);
        }
        cache.save(&self.workdir);
        Ok(self.fingerprints.lock().unwrap_or_else(|e| e.into_inner())[name].clone())
    }

    pub fn output_path(&self, name: &str) -> Result<PathBuf> {
        let fp = self.fingerprint(name)?;
        let spec = self.spec(name)?;
        Ok(self.workdir.join(format!("{name}-{}.{}", &fp[..FP_CHARS], spec.ext)))
    }

    pub fn is_fresh(&self, name: &str) -> Result<bool> {
        Ok(self.output_path(name)?.exists())
    }

    /// Stale tasks needed for `target`, dependencies first.
    pub fn plan(&self, target: &str) -> Result<Vec<PlannedTask>> {
        let mut plan = Vec::new();
        for name in self.closure(target)? {
            let output = self.output_path(&name)?;
            if !output.exists() {
                plan.push(PlannedTask { fingerprint: self.fingerprint(&name)?, name, output });
            }
        }
        Ok(plan)
    }

    /// Runs `plan` with at most `workers` tasks at once. A failure stops
    /// scheduling; tasks already running finish, the rest are skipped.
    pub fn run(&self, plan: &[PlannedTask], workers: usize) -> Result<RunReport> {
        fs::create_dir_all(&self.workdir)?;
        fs::create_dir_all(&self.scratch)?;
        let in_plan: BTreeSet<&str> = plan.iter().map(|p| p.name.as_str()).collect();
        let mut waiting: Vec<&PlannedTask> = plan.iter().collect();
        let mut done: BTreeSet<String> = BTreeSet::new();
        let mut results: BTreeMap<String, TaskRun> = BTreeMap::new();
        let mut running = 0usize;
        let mut failed = false;
        let started = Instant::now();
        let (tx, rx) = mpsc::channel::<TaskRun>();

        std::thread::scope(|scope| -> Result<()> {
            loop {
                if !failed {
                    let mut i = 0;
                    while i < waiting.len() && running < workers.max(1) {
                        let ready = self.spec(&waiting[i].name)?.deps.iter().all(|d| !in_plan.contains(d.as_str()) || done.contains(d));
                        if !ready {
                            i += 1;
                            continue;
                        }
                        let planned = waiting.remove(i);
                        let tx = tx.clone();
                        running += 1;
                        log::info!("task={} event=start fingerprint={}", planned.name, &planned.fingerprint[..FP_CHARS]);
                        scope.spawn(move || {
                            let _ = tx.send(self.execute(planned));
                        });
                    }
                }
                if running == 0 {
                    break;
                }
                let Ok(result) = rx.recv() else { break };
                running -= 1;
                match &result.status {
                    TaskStatus::Ok => {
                        log::info!(
                            "task={} event=done wall_ms={} output_bytes={} records={}",
                            result.name,
                            result.wall_ms,
                            result.output_bytes,
                            result.metrics.records
                        );
                        done.insert(result.name.clone());
                    }
                    TaskStatus::Failed(msg) => {
                        log::error!("task={} event=failed error={msg:?}", result.name);
                        failed = true;
                    }
                    TaskStatus::Skipped => {}
                }
                results.insert(result.name.clone(), result);
            }
            Ok(())
        })?;

        for p in waiting {
            log::warn!("task={} event=skipped", p.name);
            results.insert(p.name.clone(), TaskRun::skipped(p));
        }
        let tasks = plan.iter().filter_map(|p| results.remove(&p.name)).collect();
        Ok(RunReport { ok: !failed, wall_ms: started.elapsed().as_millis() as u64, tasks })
    }

    fn execute(&self, planned: &PlannedTask) -> TaskRun {
        let started = Instant::now();
        let task = &self.tasks[&planned.name];
        let mut run = TaskRun { input_bytes: 0, ..TaskRun::skipped(planned) };
        let outcome = (|| -> Result<TaskMetrics> {
            let mut deps = BTreeMap::new();
            for d in &task.spec.deps {
                let path = self.output_path(d)?;
                if !path.exists() {
                    return Err(Error::TaskFailed { task: planned.name.clone(), message: format!("missing output of {d}") });
                }
                run.input_bytes += file_len(&path);
                deps.insert(d.clone(), path);
            }
            for i in &task.spec.inputs {
                run.input_bytes += file_len(i);
            }
            let tmp = tmp_sibling(&planned.output);
            let scratch = tempfile::Builder::new().prefix(&format!("{}-", planned.name)).tempdir_in(&self.scratch)?;
            let ctx = TaskCtx { spec: &task.spec, output: tmp.clone(), deps, scratch: scratch.path().to_path_buf() };
            let result = (task.run)(&ctx).and_then(|metrics| {
                if !tmp.exists() {
                    return Err(Error::TaskFailed { task: planned.name.clone(), message: "no output written".into() });
                }
                // Metadata first so an output never exists without it.
                let meta_tmp = tmp_sibling(&meta_path(&planned.output));
                fs::write(&meta_tmp, serde_json::to_vec_pretty(&metrics)?)?;
                fs::rename(&meta_tmp, meta_path(&planned.output))?;
                fs::rename(&tmp, &planned.output)?;
                Ok(metrics)
            });
            if result.is_err() {
                let _ = fs::remove_file(&tmp);
            }
            result
        })();
        run.wall_ms = started.elapsed().as_millis() as u64;
        match outcome {
            Ok(metrics) => {
                run.output_bytes = file_len(&planned.output);
                run.metrics = metrics;
                run.status = TaskStatus::Ok;
            }
            Err(e) => run.status = TaskStatus::Failed(e.to_string()),
        }
        run
    }
}

fn file_len(p: &Path) -> u64 {
    fs::metadata(p).map_or(0, |m| m.len())
}

fn tmp_sibling(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(format!(".tmp-{}", std::process::id()));
    PathBuf::from(s)
}

pub fn meta_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(META_SUFFIX);
    PathBuf::from(s)
}

pub fn read_meta(output: &Path) -> Result<TaskMetrics> {
    let bytes = fs::read(meta_path(output))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "state", content = "error")]
pub enum TaskStatus {
    Ok,
    Failed(String),
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRun {
    pub name: String,
    pub fingerprint: String,
    pub output: PathBuf,
    pub status: TaskStatus,
    pub wall_ms: u64,
    pub input_bytes: u64,
    pub output_bytes: u64,
    pub metrics: TaskMetrics,
}

impl TaskRun {
    fn skipped(p: &PlannedTask) -> Self {
        TaskRun {
            name: p.name.clone(),
            fingerprint: p.fingerprint.clone(),
            output: p.output.clone(),
            status: TaskStatus::Skipped,
            wall_ms: 0,
            input_bytes: 0,
            output_bytes: 0,
            metrics: TaskMetrics::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub ok: bool,
    pub wall_ms: u64,
    pub tasks: Vec<TaskRun>,
}

/// Content hashes of external inputs, reused while (size, mtime) is
/// unchanged.
#[derive(Default, Serialize, Deserialize)]
struct HashCache {
    entries: BTreeMap<String, (u64, u128, String)>,
    #[serde(skip)]
    dirty: bool,
}

impl HashCache {
    fn load(workdir: &Path) -> Self {
        fs::read(workdir.join(HASH_CACHE)).ok().and_then(|b| serde_json::from_slice(&b).ok()).unwrap_or_default()
    }

    fn save(&self, workdir: &Path) {
        if !self.dirty || fs::create_dir_all(workdir).is_err() {
            return;
        }
        // Best effort: a lost cache only costs a re-hash.
        let tmp = tmp_sibling(&workdir.join(HASH_CACHE));
        if serde_json::to_vec(self).ok().and_then(|b| fs::write(&tmp, b).ok()).is_some() {
            let _ = fs::rename(&tmp, workdir.join(HASH_CACHE));
        }
    }

    fn content_hash(&mut self, path: &Path) -> Result<String> {
        let meta = fs::metadata(path).map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        let mtime = meta.modified().ok().and_then(|t| t.duration_since(UNIX_EPOCH).ok()).map_or(0, |d| d.as_nanos());
        let key = path.canonicalize().unwrap_or_else(|_| path.to_path_buf()).display().to_string();
        if let Some((len, m, hash)) = self.entries.get(&key) {
            if *len == meta.len() && *m == mtime && mtime != 0 {
                return Ok(hash.clone());
            }
        }
        let hash = hash_file(path)?;
        self.entries.insert(key, (meta.len(), mtime, hash.clone()));
        self.dirty = true;
        Ok(hash)
    }
}

pub fn hash_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Seconds since the epoch, for report file names.
pub fn unix_seconds() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn write_task(g: &mut Graph, spec: TaskSpec, counter: Arc<AtomicUsize>) {
        g.register(spec, move |ctx| {
            counter.fetch_add(1, Ordering::SeqCst);
            let mut body = ctx.spec.name.clone();
            for p in ctx.deps.values() {
                body.push_str(&fs::read_to_string(p)?);
            }
            fs::write(&ctx.output, body)?;
            Ok(TaskMetrics { records: 1, ..Default::default() })
        });
    }

    fn diamond(dir: &Path, param: &str, counter: Arc<AtomicUsize>) -> Graph {
        let mut g = Graph::new(dir.join("work"), dir.join("tmp"), "test");
        write_task(&mut g, TaskSpec::new("a", "txt").param("p", param), counter.clone());
        write_task(&mut g, TaskSpec::new("b", "txt").dep("a"), counter.clone());
        write_task(&mut g, TaskSpec::new("c", "txt").dep("a"), counter.clone());
        write_task(&mut g, TaskSpec::new("d", "txt").dep("b").dep("c"), counter);
        g
    }

    fn names(plan: &[PlannedTask]) -> Vec<&str> {
        plan.iter().map(|p| p.name.as_str()).collect()
    }

    #[test]
    fn diamond_plans_each_task_once() {
        let dir = tempfile::tempdir().unwrap();
        let n = Arc::new(AtomicUsize::new(0));
        let g = diamond(dir.path(), "1", n.clone());
        let plan = g.plan("d").unwrap();
        assert_eq!(names(&plan), vec!["a", "b", "c", "d"]);
        let report = g.run(&plan, 2).unwrap();
        assert!(report.ok);
        assert_eq!(n.load(Ordering::SeqCst), 4);
        assert_eq!(fs::read_to_string(g.output_path("d").unwrap()).unwrap(), "dbaca");
        // Rerun is a no-op.
        assert!(g.plan("d").unwrap().is_empty());
    }

    #[test]
    fn param_change_replans_downstream() {
        let dir = tempfile::tempdir().unwrap();
        let n = Arc::new(AtomicUsize::new(0));
        let g = diamond(dir.path(), "1", n.clone());
        g.run(&g.plan("d").unwrap(), 1).unwrap();
        let g2 = diamond(dir.path(), "2", n);
        assert_eq!(names(&g2.plan("d").unwrap()), vec!["a", "b", "c", "d"]);
        let mut g3 = diamond(dir.path(), "1", Arc::new(AtomicUsize::new(0)));
        write_task(&mut g3, TaskSpec::new("c", "txt").dep("a").param("q", "x"), Arc::new(AtomicUsize::new(0)));
        assert_eq!(names(&g3.plan("d").unwrap()), vec!["c", "d"]);
    }

    #[test]
    fn input_content_drives_staleness() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        fs::write(&input, "one").unwrap();
        let mk = || {
            let mut g = Graph::new(dir.path().join("work"), dir.path().join("tmp"), "test");
            write_task(&mut g, TaskSpec::new("a", "txt").input(&input), Arc::new(AtomicUsize::new(0)));
            g
        };
        let g = mk();
        g.run(&g.plan("a").unwrap(), 1).unwrap();
        assert!(mk().plan("a").unwrap().is_empty());
        fs::write(&input, "two").unwrap();
        assert_eq!(mk().plan("a").unwrap().len(), 1);
    }

    #[test]
    fn failing_middle_task_leaves_upstream_and_skips_downstream() {
        let dir = tempfile::tempdir().unwrap();
        let n = Arc::new(AtomicUsize::new(0));
        let mut g = diamond(dir.path(), "1", n);
        g.register(TaskSpec::new("b", "txt").dep("a"), |ctx| {
            fs::write(&ctx.output, "partial")?;
            Err(Error::Config("boom".into()))
        });
        let plan = g.plan("d").unwrap();
        let report = g.run(&plan, 1).unwrap();
        assert!(!report.ok);
        let status: BTreeMap<_, _> = report.tasks.iter().map(|t| (t.name.as_str(), t.status.clone())).collect();
        assert_eq!(status["a"], TaskStatus::Ok);
        assert!(matches!(status["b"], TaskStatus::Failed(_)));
        assert_eq!(status["d"], TaskStatus::Skipped);
        assert!(g.is_fresh("a").unwrap());
        assert!(!g.is_fresh("b").unwrap());
        assert!(!g.is_fresh("d").unwrap());
        // Nothing half-written left behind.
        let leftovers: Vec<_> = fs::read_dir(g.workdir()).unwrap().filter_map(|e| e.ok()).filter(|e| e.file_name().to_string_lossy().contains(".tmp-")).collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn unknown_and_cyclic() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = Graph::new(dir.path().join("w"), dir.path().join("t"), "s");
        assert!(matches!(g.plan("nope"), Err(Error::UnknownTask(_))));
        write_task(&mut g, TaskSpec::new("x", "txt").dep("y"), Arc::new(AtomicUsize::new(0)));
        write_task(&mut g, TaskSpec::new("y", "txt").dep("x"), Arc::new(AtomicUsize::new(0)));
        match g.plan("x") {
            Err(Error::Cycle(c)) => assert_eq!(c, vec!["x", "y", "x"]),
            other => panic!("{other:?}"),
        }
        write_task(&mut g, TaskSpec::new("z", "txt").dep("missing"), Arc::new(AtomicUsize::new(0)));
        assert!(matches!(g.plan("z"), Err(Error::UnknownTask(t)) if t == "missing"));
    }
}

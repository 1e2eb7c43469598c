//! Experiment runner: fixed-length, calibrated search and exhaustive modes,
//! probe-curve recording, and report aggregation.
//!
//! Result files are line-delimited JSON, one [`TaskResult`] per task in task
//! file order. They carry no timestamps, so reruns are byte-identical.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, BackendSpec, ProbeBackend, RemoteOptions};
use crate::formats::{self, FormatError};
use crate::metrics::{
    bleu2, length_error_stats, rouge_l, search_cost_stats, LengthErrorStats, MetricsError,
    SearchCostStats,
};
use crate::par::Execution;
use crate::search::{discover_length, exhaustive_argmax};
use crate::types::{BiasModel, InfillTask, ProbeRecord, SearchConfig, SearchResult, TraceEntry};

/// Tolerance used for the `within_k` length statistic in reports.
pub const REPORT_WITHIN_K: usize = 2;
pub const SYNTHETIC_CONCURRENCY: usize = 8;
pub const REMOTE_CONCURRENCY: usize = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Bad input as opposed to a failure while running.
    pub fn is_validation(&self) -> bool {
        match self {
            HarnessError::Config(_) | HarnessError::Metrics(_) => true,
            HarnessError::Format(e) => e.is_validation(),
            HarnessError::Backend(e) => matches!(e, BackendError::Config(_)),
            HarnessError::Io { .. } => false,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fixed,
    Cal,
    Exhaustive,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Fixed => "fixed",
            Mode::Cal => "cal",
            Mode::Exhaustive => "exhaustive",
        }
    }

    pub fn needs_bias(self) -> bool {
        self != Mode::Fixed
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(Mode::Fixed),
            "cal" => Ok(Mode::Cal),
            "exhaustive" => Ok(Mode::Exhaustive),
            other => Err(HarnessError::Config(format!(
                "unknown mode `{other}` (expected fixed, cal or exhaustive)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub bias_model_path: Option<PathBuf>,
    pub backend: BackendSpec,
    pub tasks_path: PathBuf,
    pub output_path: PathBuf,
    /// Worker count; defaults by backend kind.
    #[serde(default)]
    pub concurrency: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.search
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.mode.needs_bias() && self.bias_model_path.is_none() {
            return Err(HarnessError::Config(format!(
                "mode {} needs bias_model_path",
                self.mode
            )));
        }
        if self.concurrency == Some(0) {
            return Err(HarnessError::Config("concurrency must be >= 1".into()));
        }
        Ok(())
    }

    pub fn effective_concurrency(&self) -> usize {
        self.concurrency.unwrap_or(if self.backend.is_remote() {
            REMOTE_CONCURRENCY
        } else {
            SYNTHETIC_CONCURRENCY
        })
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFailure {
    pub message: String,
    pub partial_trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub mode: Mode,
    pub l_init: usize,
    /// Absent only when the length could not be determined.
    pub l_used: Option<usize>,
    pub oracle_length: Option<usize>,
    pub search: Option<SearchResult>,
    pub decoded_middle: Option<String>,
    pub metrics: BTreeMap<String, f64>,
    pub error: Option<TaskFailure>,
}

impl TaskResult {
    fn new(task: &InfillTask, mode: Mode, l_init: usize) -> Self {
        TaskResult {
            task_id: task.task_id.clone(),
            mode,
            l_init,
            l_used: None,
            oracle_length: None,
            search: None,
            decoded_middle: None,
            metrics: BTreeMap::new(),
            error: None,
        }
    }

    fn fail(mut self, message: String, partial_trace: Vec<TraceEntry>) -> Self {
        self.error = Some(TaskFailure {
            message,
            partial_trace,
        });
        self
    }
}

fn oracle_length<B: ProbeBackend + ?Sized>(
    backend: &B,
    task: &InfillTask,
) -> Result<Option<usize>, BackendError> {
    if let Some(n) = task.oracle_length {
        return Ok(Some(n));
    }
    let Some(gt) = &task.ground_truth_middle else {
        return Ok(None);
    };
    match backend.tokenize(gt) {
        Ok(n) => Ok(Some(n)),
        Err(BackendError::Unsupported(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs one task end to end. Failures are captured in the result.
pub fn run_task<B: ProbeBackend + ?Sized>(
    backend: &B,
    task: &InfillTask,
    mode: Mode,
    search: &SearchConfig,
    model: Option<&BiasModel>,
) -> TaskResult {
    let mut result = TaskResult::new(task, mode, search.l_init);
    match oracle_length(backend, task) {
        Ok(n) => result.oracle_length = n,
        Err(e) => return result.fail(format!("tokenize: {e}"), Vec::new()),
    }

    let searched = match (mode, model) {
        (Mode::Fixed, _) => None,
        (_, None) => return result.fail(format!("mode {mode} needs a bias model"), Vec::new()),
        (Mode::Cal, Some(m)) => Some(discover_length(backend, task, search, m)),
        (Mode::Exhaustive, Some(m)) => Some(exhaustive_argmax(backend, task, 1, search.l_max, m)),
    };
    let l_used = match searched {
        None => search.l_init,
        Some(Ok(sr)) => {
            let l = sr.l_hat;
            result.search = Some(sr);
            l
        }
        Some(Err(e)) => return result.fail(e.to_string(), e.partial_trace),
    };
    result.l_used = Some(l_used);

    if let Some(oracle) = result.oracle_length {
        result
            .metrics
            .insert("abs_length_error".into(), l_used.abs_diff(oracle) as f64);
    }

    if backend.capabilities().supports_decode {
        match backend.decode(task, l_used) {
            Ok(middle) => {
                if let Some(gt) = &task.ground_truth_middle {
                    let r = rouge_l(&middle, gt);
                    result.metrics.insert("bleu2".into(), bleu2(&middle, gt));
                    result
                        .metrics
                        .insert("rouge_l_precision".into(), r.precision);
                    result.metrics.insert("rouge_l_recall".into(), r.recall);
                    result.metrics.insert("rouge_l_f1".into(), r.f1);
                }
                result.decoded_middle = Some(middle);
            }
            Err(e) => return result.fail(format!("decode: {e}"), Vec::new()),
        }
    }
    result
}

/// In-memory core of [`run_experiment`].
pub fn run_tasks<B: ProbeBackend + ?Sized>(
    backend: &B,
    tasks: &[InfillTask],
    mode: Mode,
    search: &SearchConfig,
    model: Option<&BiasModel>,
    exec: Execution,
) -> Vec<TaskResult> {
    exec.map(tasks, |task| run_task(backend, task, mode, search, model))
}

pub fn serialize_results(results: &[TaskResult]) -> String {
    formats::to_json_lines(results)
}

pub fn parse_results(input: &str) -> Result<Vec<TaskResult>, HarnessError> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| {
            HarnessError::Format(FormatError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })
        })?);
    }
    Ok(out)
}

pub fn read_results(path: &Path) -> Result<Vec<TaskResult>, HarnessError> {
    parse_results(&fs::read_to_string(path).map_err(io_err(path))?)
}

/// Reads the complete lines of an existing result file and cuts off a
/// trailing partial line left by an interrupted run.
fn recover_output(path: &Path) -> Result<Vec<TaskResult>, HarnessError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut done = Vec::new();
    let mut good_bytes = 0;
    for line in text.split_inclusive('\n') {
        if !line.ends_with('\n') {
            break;
        }
        match serde_json::from_str::<TaskResult>(line) {
            Ok(r) => done.push(r),
            Err(_) if line.trim().is_empty() => {}
            Err(_) => break,
        }
        good_bytes += line.len();
    }
    if good_bytes < text.len() {
        let file = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(io_err(path))?;
        file.set_len(good_bytes as u64).map_err(io_err(path))?;
    }
    Ok(done)
}

/// Runs the configured experiment, appending to `output_path` as tasks
/// finish. Tasks already present in the output are skipped, so an
/// interrupted run can be resumed by running it again.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<TaskResult>, HarnessError> {
    config.validate()?;
    let tasks = formats::read_tasks(&config.tasks_path)?;
    let model = match (&config.bias_model_path, config.mode.needs_bias()) {
        (Some(p), true) => Some(formats::read_bias_model(p)?),
        _ => None,
    };
    let workers = config.effective_concurrency();
    let remote = RemoteOptions {
        max_in_flight: workers,
        ..RemoteOptions::from_env()?
    };
    let backend = config.backend.open(config.seed, &remote)?;
    run_with_backend(config, &*backend, &tasks, model.as_ref(), workers)
}

/// [`run_experiment`] with the inputs already loaded.
pub fn run_with_backend<B: ProbeBackend + ?Sized>(
    config: &ExperimentConfig,
    backend: &B,
    tasks: &[InfillTask],
    model: Option<&BiasModel>,
    workers: usize,
) -> Result<Vec<TaskResult>, HarnessError> {
    let out = &config.output_path;
    let mut results = recover_output(out)?;
    let done: HashSet<String> = results.iter().map(|r| r.task_id.clone()).collect();
    let pending: Vec<InfillTask> = tasks
        .iter()
        .filter(|t| !done.contains(&t.task_id))
        .cloned()
        .collect();

    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(out)
        .map_err(io_err(out))?;
    let exec = Execution::with_workers(workers);
    for chunk in pending.chunks(workers.max(1) * 16) {
        let batch = run_tasks(backend, chunk, config.mode, &config.search, model, exec);
        file.write_all(serialize_results(&batch).as_bytes())
            .map_err(io_err(out))?;
        file.flush().map_err(io_err(out))?;
        results.extend(batch);
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeFailure {
    pub task_id: String,
    pub length: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Recording {
    pub records: Vec<ProbeRecord>,
    pub failures: Vec<ProbeFailure>,
}

pub fn validate_grid(grid: &[usize]) -> Result<(), HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::Config("probe grid is empty".into()));
    }
    if grid[0] == 0 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HarnessError::Config(
            "probe grid must be strictly ascending lengths >= 1".into(),
        ));
    }
    Ok(())
}

/// Probes every task at every grid length. Failed points are reported and
/// left out of the log.
pub fn record_probe_curves<B: ProbeBackend + ?Sized>(
    tasks: &[InfillTask],
    backend: &B,
    grid: &[usize],
    exec: Execution,
) -> Result<Recording, HarnessError> {
    validate_grid(grid)?;
    let per_task = exec.map(tasks, |task| {
        let mut rec = Recording::default();
        for &length in grid {
            let made = backend
                .probe(task, length)
                .map_err(|e| e.to_string())
                .and_then(|p| {
                    let curve_only = p.confidences.is_empty();
                    ProbeRecord::from_parts(
                        task.task_id.clone(),
                        length,
                        p.confidences,
                        p.phi,
                        backend.backend_id().to_string(),
                        curve_only,
                    )
                    .map_err(|e| e.to_string())
                });
            match made {
                Ok(r) => rec.records.push(r),
                Err(message) => rec.failures.push(ProbeFailure {
                    task_id: task.task_id.clone(),
                    length,
                    message,
                }),
            }
        }
        rec
    });
    let mut all = Recording::default();
    for rec in per_task {
        all.records.extend(rec.records);
        all.failures.extend(rec.failures);
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub mode: Option<Mode>,
    /// `None` for the pooled row over all initial lengths.
    pub l_init: Option<usize>,
    pub n_tasks: usize,
    pub n_errors: usize,
    /// Means of per-task metrics plus the length and cost statistics.
    pub metrics: BTreeMap<String, f64>,
    pub length_error: Option<LengthErrorStats>,
    pub search_cost: Option<SearchCostStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub mode: Option<Mode>,
    pub l_init: Option<usize>,
    /// Result minus baseline for every key both sides have.
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub groups: Vec<GroupSummary>,
    pub deltas: Option<Vec<Delta>>,
}

fn summarize_group(
    mode: Option<Mode>,
    l_init: Option<usize>,
    rows: &[&TaskResult],
) -> GroupSummary {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in rows {
        for (k, v) in &r.metrics {
            let e = sums.entry(k.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    let mut metrics: BTreeMap<String, f64> = sums
        .into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect();

    let pairs: Vec<(usize, usize)> = rows
        .iter()
        .filter_map(|r| Some((r.l_used?, r.oracle_length?)))
        .collect();
    let length_error = length_error_stats(&pairs, REPORT_WITHIN_K).ok();
    if let Some(s) = &length_error {
        metrics.insert("length_mae".into(), s.mean_abs_error);
        metrics.insert("length_exact_rate".into(), s.exact_rate);
        metrics.insert("length_within_k_rate".into(), s.within_k_rate);
    }
    let search_cost = search_cost_stats(rows.iter().filter_map(|r| r.search.as_ref())).ok();
    if let Some(s) = &search_cost {
        metrics.insert("mean_probe_count".into(), s.mean_probe_count);
    }
    GroupSummary {
        mode,
        l_init,
        n_tasks: rows.len(),
        n_errors: rows.iter().filter(|r| r.error.is_some()).count(),
        metrics,
        length_error,
        search_cost,
    }
}

fn grouped(results: &[TaskResult]) -> Vec<GroupSummary> {
    let mut by_key: BTreeMap<(Mode, usize), Vec<&TaskResult>> = BTreeMap::new();
    let mut by_mode: BTreeMap<Mode, Vec<&TaskResult>> = BTreeMap::new();
    for r in results {
        by_key.entry((r.mode, r.l_init)).or_default().push(r);
        by_mode.entry(r.mode).or_default().push(r);
    }
    let mut out = Vec::new();
    for (mode, rows) in &by_mode {
        for ((m, l), group) in by_key.range((*mode, 0)..=(*mode, usize::MAX)) {
            out.push(summarize_group(Some(*m), Some(*l), group));
        }
        out.push(summarize_group(Some(*mode), None, rows));
    }
    out
}

/// Aggregates results per (mode, initial length) and per mode. With a
/// baseline, each row also gets its difference from the baseline row with
/// the same initial length (the pooled baseline row for pooled rows).
pub fn summarize(
    results: &[TaskResult],
    baseline: Option<&[TaskResult]>,
) -> Result<Report, HarnessError> {
    if results.is_empty() {
        return Err(MetricsError::Empty("summarize").into());
    }
    let groups = grouped(results);
    let deltas = match baseline {
        None => None,
        Some([]) => return Err(MetricsError::Empty("summarize baseline").into()),
        Some(base) => {
            let mut by_l: BTreeMap<usize, Vec<&TaskResult>> = BTreeMap::new();
            for r in base {
                by_l.entry(r.l_init).or_default().push(r);
            }
            let pooled = summarize_group(None, None, &base.iter().collect::<Vec<_>>());
            let deltas = groups
                .iter()
                .filter_map(|g| {
                    let reference = match g.l_init {
                        None => pooled.clone(),
                        Some(l) => summarize_group(None, Some(l), by_l.get(&l)?),
                    };
                    let metrics = g
                        .metrics
                        .iter()
                        .filter_map(|(k, v)| Some((k.clone(), v - reference.metrics.get(k)?)))
                        .collect();
                    Some(Delta {
                        mode: g.mode,
                        l_init: g.l_init,
                        metrics,
                    })
                })
                .collect();
            Some(deltas)
        }
    };
    Ok(Report { groups, deltas })
}

impl Report {
    /// Aligned plain-text table, one row per group.
    pub fn to_table(&self) -> String {
        let keys: Vec<&String> = {
            let mut set: Vec<&String> = self.groups.iter().flat_map(|g| g.metrics.keys()).collect();
            set.sort();
            set.dedup();
            set
        };
        let label = |mode: Option<Mode>, l: Option<usize>| {
            let m = mode.map_or("all", Mode::as_str);
            match l {
                Some(l) => format!("{m} L0={l}"),
                None => format!("{m} avg"),
            }
        };
        let mut header = vec!["group".to_string(), "n".into(), "errors".into()];
        header.extend(keys.iter().map(|k| k.to_string()));
        let mut rows = vec![header];
        for g in &self.groups {
            let mut row = vec![
                label(g.mode, g.l_init),
                g.n_tasks.to_string(),
                g.n_errors.to_string(),
            ];
            row.extend(
                keys.iter()
                    .map(|k| g.metrics.get(*k).map_or("-".into(), |v| format!("{v:.4}"))),
            );
            rows.push(row);
        }
        if let Some(deltas) = &self.deltas {
            for d in deltas {
                let mut row = vec![
                    format!("delta {}", label(d.mode, d.l_init)),
                    "".into(),
                    "".into(),
                ];
                row.extend(
                    keys.iter()
                        .map(|k| d.metrics.get(*k).map_or("-".into(), |v| format!("{v:+.4}"))),
                );
                rows.push(row);
            }
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, w))| {
                    if i == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

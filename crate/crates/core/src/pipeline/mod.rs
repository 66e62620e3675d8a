//! The library side of the `toolstop` commands. Each `cmd_*` function reads
//! its inputs, writes its outputs under the given directory, and returns a
//! summary; [`PipelineError::exit_code`] maps failures to process codes.

mod config;
mod run;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    AgentError, AgentSpec, GroundTruthOracle, RefusalStyle, RunError, ScriptSource, ScriptedPolicy, SuccessOracle,
};
use crate::critical::{
    build_infeasible_suite, recovery_report, CriticalToolSet, ExcludedTrace, RecoveryReport, RetentionPolicy,
    SkipEntry,
};
use crate::metrics::{pareto_frontier, EvaluationRecord, MetricReport};
use crate::stats::{
    annotation_rows, cochran_sample_size_with, parse_judgments, write_annotation_sheet, SamplePlan, SizeRounding,
    StatsError, StatsReport,
};
use crate::task::{
    generate_synthetic_suite, load_dataset, load_suite, write_dataset, write_suite, DatasetFormat, SuiteEntry,
    SyntheticSuiteSpec, TaskError,
};
use crate::trace::{read_trace_dir, ExecutionTrace, Outcome, TraceError};
use crate::Feasibility;

pub use config::{
    synthetic_roster, EvaluateConfig, OracleKind, PairSpec, PipelineConfig, RunMode, RunOverrides,
};
pub use run::{cmd_run, RunManifest, RunOptions};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1 usage or configuration, 2 data, 3 transport.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config(_) => 1,
            Self::Data(_) | Self::Io { .. } => 2,
            Self::Transport(_) => 3,
        }
    }
}

impl From<TaskError> for PipelineError {
    fn from(e: TaskError) -> Self {
        match e {
            TaskError::UnknownFormat(_) => Self::Usage(e.to_string()),
            TaskError::SyntheticSpec(_) => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<TraceError> for PipelineError {
    fn from(e: TraceError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<RunError> for PipelineError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Agent(AgentError::Config(m)) => Self::Config(m),
            RunError::Agent(a @ (AgentError::Transport { .. } | AgentError::Auth(_))) => Self::Transport(a.to_string()),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<StatsError> for PipelineError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::InvalidFraction { .. } => Self::Usage(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| PipelineError::io(path, e))
}

fn read_file(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Canonical files may carry feasibility labels; adapter formats are
/// always feasible originals.
pub fn load_entries(path: &Path, format: DatasetFormat) -> Result<Vec<SuiteEntry>, PipelineError> {
    Ok(match format {
        DatasetFormat::Canonical => load_suite(path)?,
        _ => load_dataset(path, format)?
            .into_iter()
            .map(|task| SuiteEntry {
                task,
                label: Feasibility::Feasible,
                source_task_id: None,
                masked_tools: BTreeSet::new(),
            })
            .collect(),
    })
}

// ---- gen-synthetic ----

#[derive(Debug, Clone)]
pub struct GenSyntheticOptions {
    pub spec: SyntheticSuiteSpec,
    /// Scripted agents in the generated roster config.
    pub roster_size: usize,
    pub extras: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSyntheticSummary {
    pub tasks_file: PathBuf,
    pub planted_file: PathBuf,
    pub roster_file: PathBuf,
    pub eval_roster_file: PathBuf,
    pub tasks: usize,
}

/// Writes `tasks.json`, `planted.json` (task id → planted critical tools),
/// `roster.toml` with stop-unaware agents for suite construction, and
/// `eval-roster.toml` with one agent per refusal behaviour for evaluation.
pub fn cmd_gen_synthetic(opts: &GenSyntheticOptions) -> Result<GenSyntheticSummary, PipelineError> {
    let suite = generate_synthetic_suite(&opts.spec)?;
    let tasks_file = opts.out_dir.join("tasks.json");
    let planted_file = opts.out_dir.join("planted.json");
    let roster_file = opts.out_dir.join("roster.toml");
    write_file(&tasks_file, &write_dataset(&suite.tasks))?;
    write_file(&planted_file, &to_json(&suite.planted))?;
    let config = PipelineConfig {
        seed: Some(opts.spec.seed),
        agents: synthetic_roster(opts.roster_size.max(1), opts.extras, false, RefusalStyle::KeepTrying),
        ..PipelineConfig::default()
    };
    write_file(&roster_file, &config.to_toml())?;
    let eval_roster_file = opts.out_dir.join("eval-roster.toml");
    let eval = PipelineConfig {
        agents: evaluation_roster(),
        ..config
    };
    write_file(&eval_roster_file, &eval.to_toml())?;
    Ok(GenSyntheticSummary {
        tasks_file,
        planted_file,
        roster_file,
        eval_roster_file,
        tasks: suite.tasks.len(),
    })
}

/// Three scripted agents following the planted solution path: one that
/// checks its pool and emits `STOP:`, one that checks and declines in
/// prose, and one that never stops.
pub fn evaluation_roster() -> Vec<AgentSpec> {
    let source = ScriptSource::FromGroundTruth {
        agent_index: 0,
        roster_size: 1,
        extras: 0,
    };
    [
        ("stop-explicit", true, RefusalStyle::ExplicitStop),
        ("stop-soft", true, RefusalStyle::SoftRefusal),
        ("keep-trying", false, RefusalStyle::KeepTrying),
    ]
    .into_iter()
    .map(|(id, aware, style)| AgentSpec::scripted(id, ScriptedPolicy::new(source.clone(), aware, style)))
    .collect()
}

// ---- build-infeasible ----

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub traces_dir: PathBuf,
    pub dataset: PathBuf,
    pub format: DatasetFormat,
    /// Defaults to every agent with a trace on the dataset.
    pub roster: Option<Vec<String>>,
    pub policy: RetentionPolicy,
    /// `planted.json` from gen-synthetic, for a recovery report.
    pub planted: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildLog {
    pub source_tasks: usize,
    pub retained: usize,
    pub roster: Vec<String>,
    pub policy: RetentionPolicy,
    pub skip_counts: BTreeMap<String, usize>,
    pub skipped: Vec<SkipEntry>,
    pub excluded_traces: Vec<ExcludedTrace>,
    pub critical: Vec<CriticalToolSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery: Option<RecoveryReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildSummary {
    pub suite_file: PathBuf,
    pub log_file: PathBuf,
    pub log: BuildLog,
}

fn traces_by_key(dir: &Path) -> Result<BTreeMap<(String, String), ExecutionTrace>, PipelineError> {
    if !dir.is_dir() {
        return Err(PipelineError::Data(format!("no trace directory at {}", dir.display())));
    }
    Ok(read_trace_dir(dir)?
        .finalized
        .into_iter()
        .map(|t| ((t.task_id.clone(), t.agent_id.clone()), t))
        .collect())
}

/// Writes the infeasible suite to `out` and the build log next to it
/// (`<out stem>.log.json`).
pub fn cmd_build_infeasible(opts: &BuildOptions) -> Result<BuildSummary, PipelineError> {
    let tasks: Vec<_> = load_entries(&opts.dataset, opts.format)?.into_iter().map(|e| e.task).collect();
    let traces = traces_by_key(&opts.traces_dir)?;
    let ids: BTreeSet<&str> = tasks.iter().map(|t| t.task_id.as_str()).collect();
    let roster: Vec<String> = match &opts.roster {
        Some(r) => r.clone(),
        None => traces
            .keys()
            .filter(|(task, _)| ids.contains(task.as_str()))
            .map(|(_, agent)| agent.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    if roster.is_empty() {
        return Err(PipelineError::Data("no traces cover the dataset".into()));
    }
    let missing: Vec<String> = tasks
        .iter()
        .flat_map(|t| roster.iter().map(move |a| (t, a)))
        .filter(|(t, a)| !traces.contains_key(&(t.task_id.clone(), (*a).clone())))
        .map(|(t, a)| format!("{}::{a}", t.task_id))
        .collect();
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(5).map(String::as_str).collect();
        return Err(PipelineError::Data(format!(
            "missing traces for {} (task, agent) pairs, e.g. {}",
            missing.len(),
            shown.join(", ")
        )));
    }

    let build = build_infeasible_suite(&tasks, &traces, &roster, opts.policy);
    let recovery = match &opts.planted {
        Some(p) => {
            let planted: BTreeMap<String, BTreeSet<String>> = serde_json::from_str(&read_file(p)?)
                .map_err(|e| PipelineError::Data(format!("{}: {e}", p.display())))?;
            Some(recovery_report(&build, &tasks, &planted))
        }
        None => None,
    };
    let entries: Vec<SuiteEntry> = build.suite.iter().map(|v| v.to_suite_entry()).collect();
    write_file(&opts.out, &write_suite(&entries))?;
    let log = BuildLog {
        source_tasks: tasks.len(),
        retained: build.suite.len(),
        roster,
        policy: opts.policy,
        skip_counts: build.skip_counts().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        skipped: build.skipped,
        excluded_traces: build.excluded_traces,
        critical: build.critical,
        recovery,
    };
    let stem = opts.out.file_stem().map_or_else(|| "suite".into(), |s| s.to_string_lossy().into_owned());
    let log_file = opts.out.with_file_name(format!("{stem}.log.json"));
    write_file(&log_file, &to_json(&log))?;
    Ok(BuildSummary {
        suite_file: opts.out.clone(),
        log_file,
        log,
    })
}

// ---- evaluate / report ----

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub suites: Vec<PathBuf>,
    pub traces_dir: PathBuf,
    pub oracle: OracleKind,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateSummary {
    pub records: Vec<EvaluationRecord>,
    pub report: MetricReport,
    /// Suite tasks without any trace; evaluation skipped them.
    pub uncovered: Vec<String>,
}

/// Re-judges a trace against its task's ground truth. Stopped or capped
/// runs never count as successes.
fn judged_success(entry: &SuiteEntry, trace: &ExecutionTrace) -> bool {
    if trace.decision == Feasibility::Infeasible || trace.outcome == Outcome::TurnCapExceeded || trace.error.is_some() {
        return false;
    }
    let Some(last) = trace.final_message() else {
        return false;
    };
    GroundTruthOracle.judge(&entry.task, &trace.steps, &last.text)
}

pub fn evaluation_records(
    entries: &[SuiteEntry],
    traces: &[ExecutionTrace],
    oracle: OracleKind,
) -> (Vec<EvaluationRecord>, Vec<String>) {
    let mut by_task: BTreeMap<&str, Vec<&ExecutionTrace>> = BTreeMap::new();
    for t in traces {
        by_task.entry(t.task_id.as_str()).or_default().push(t);
    }
    let mut records = Vec::new();
    let mut uncovered = Vec::new();
    for e in entries {
        let Some(ts) = by_task.get(e.task.task_id.as_str()) else {
            uncovered.push(e.task.task_id.clone());
            continue;
        };
        for t in ts {
            let mut r = EvaluationRecord::from_trace(e, t);
            if oracle == OracleKind::GroundTruth {
                r.success = judged_success(e, t);
            }
            records.push(r);
        }
    }
    records.sort_by(|a, b| (&a.agent_id, &a.dataset_id, &a.task_id).cmp(&(&b.agent_id, &b.dataset_id, &b.task_id)));
    (records, uncovered)
}

pub fn write_records(records: &[EvaluationRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn parse_records(text: &str) -> Result<Vec<EvaluationRecord>, PipelineError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| PipelineError::Data(format!("records line {}: {e}", i + 1))))
        .collect()
}

/// Writes `report.json`, `report.txt` and `frontier.csv`.
fn write_report(report: &MetricReport, out_dir: &Path) -> Result<(), PipelineError> {
    write_file(&out_dir.join("report.json"), &report.to_json())?;
    write_file(&out_dir.join("report.txt"), &report.render_text())?;
    let points = report.frontier_points();
    let frontier: BTreeSet<String> = pareto_frontier(&points).into_iter().map(|p| p.agent_id).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["agent_id", "sr", "fcr", "on_frontier"]).expect("in-memory csv");
    for p in &points {
        w.write_record([
            p.agent_id.clone(),
            format!("{:.6}", p.sr),
            format!("{:.6}", p.fcr),
            frontier.contains(&p.agent_id).to_string(),
        ])
        .expect("in-memory csv");
    }
    let csv = String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8");
    write_file(&out_dir.join("frontier.csv"), &csv)
}

/// Pairs suite entries with traces, writes `records.jsonl` and the report
/// files. Entries without traces are skipped with a warning; it is an
/// error if none are covered.
pub fn cmd_evaluate(opts: &EvaluateOptions) -> Result<EvaluateSummary, PipelineError> {
    let mut entries = Vec::new();
    for s in &opts.suites {
        entries.extend(load_suite(s)?);
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = entries.iter().find(|e| !seen.insert(e.task.task_id.clone())) {
        return Err(PipelineError::Data(format!("task {} appears in more than one suite", dup.task.task_id)));
    }
    if !opts.traces_dir.is_dir() {
        return Err(PipelineError::Data(format!("no trace directory at {}", opts.traces_dir.display())));
    }
    let traces = read_trace_dir(&opts.traces_dir)?.finalized;
    let (records, uncovered) = evaluation_records(&entries, &traces, opts.oracle);
    if records.is_empty() {
        return Err(PipelineError::Data("no suite entry has a trace".into()));
    }
    if !uncovered.is_empty() {
        log::warn!("{} suite entries have no traces and were skipped", uncovered.len());
    }
    let report = MetricReport::from_records(&records);
    write_file(&opts.out_dir.join("records.jsonl"), &write_records(&records))?;
    write_report(&report, &opts.out_dir)?;
    Ok(EvaluateSummary {
        records,
        report,
        uncovered,
    })
}

/// Rebuilds the report files from one or more `records.jsonl` files.
pub fn cmd_report(records_files: &[PathBuf], out_dir: &Path) -> Result<MetricReport, PipelineError> {
    let mut records = Vec::new();
    for f in records_files {
        records.extend(parse_records(&read_file(f)?)?);
    }
    if records.is_empty() {
        return Err(PipelineError::Data("no evaluation records".into()));
    }
    let report = MetricReport::from_records(&records);
    write_report(&report, out_dir)?;
    Ok(report)
}

// ---- sample-plan / agreement ----

#[derive(Debug, Clone)]
pub struct SamplePlanOptions {
    pub suite: PathBuf,
    pub confidence: f64,
    pub margin: f64,
    pub variability: f64,
    pub rounding: SizeRounding,
    pub override_n: Option<u64>,
    pub seed: u64,
    pub annotators: usize,
    pub out_dir: PathBuf,
}

/// Computes the plan, draws a seeded stratified sample (strata are
/// datasets), and writes `plan.json`, `sample.csv` and one
/// `annotator-<i>.csv` sheet per annotator.
pub fn cmd_sample_plan(opts: &SamplePlanOptions) -> Result<SamplePlan, PipelineError> {
    let entries = load_suite(&opts.suite)?;
    if entries.is_empty() {
        return Err(PipelineError::Data("the suite is empty".into()));
    }
    let mut strata: BTreeMap<String, Vec<&SuiteEntry>> = BTreeMap::new();
    for e in &entries {
        strata.entry(e.task.dataset_id.clone()).or_default().push(e);
    }
    let sizes: BTreeMap<String, u64> = strata.iter().map(|(k, v)| (k.clone(), v.len() as u64)).collect();
    let mut plan = cochran_sample_size_with(entries.len() as u64, opts.confidence, opts.margin, opts.variability, opts.rounding)?;
    if let Some(n) = opts.override_n {
        plan = plan.with_override(n)?;
    }
    let plan = plan.with_allocation(&sizes)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut sample: Vec<SuiteEntry> = Vec::with_capacity(plan.n as usize);
    for (name, members) in &mut strata {
        members.sort_by(|a, b| a.task.task_id.cmp(&b.task.task_id));
        members.shuffle(&mut rng);
        let k = plan.allocation[name] as usize;
        sample.extend(members[..k].iter().map(|e| (*e).clone()));
    }
    sample.sort_by(|a, b| (&a.task.dataset_id, &a.task.task_id).cmp(&(&b.task.dataset_id, &b.task.task_id)));

    let sheet = write_annotation_sheet(&annotation_rows(&sample));
    write_file(&opts.out_dir.join("plan.json"), &to_json(&plan))?;
    write_file(&opts.out_dir.join("sample.csv"), &sheet)?;
    for i in 1..=opts.annotators.max(1) {
        write_file(&opts.out_dir.join(format!("annotator-{i}.csv")), &sheet)?;
    }
    Ok(plan)
}

#[derive(Debug, Clone)]
pub struct AgreementOptions {
    pub first: PathBuf,
    pub second: PathBuf,
    /// Maps task ids to strata (datasets) when given.
    pub suite: Option<PathBuf>,
    pub confidence: f64,
    pub out_dir: PathBuf,
}

/// Writes `stats.json` and `stats.txt`.
pub fn cmd_agreement(opts: &AgreementOptions) -> Result<StatsReport, PipelineError> {
    let first = parse_judgments(&read_file(&opts.first)?)?;
    let second = parse_judgments(&read_file(&opts.second)?)?;
    let strata = match &opts.suite {
        Some(p) => Some(
            load_suite(p)?
                .into_iter()
                .map(|e| (e.task.task_id, e.task.dataset_id))
                .collect::<BTreeMap<_, _>>(),
        ),
        None => None,
    };
    let report = StatsReport::build(&first, &second, strata.as_ref(), opts.confidence)?;
    write_file(&opts.out_dir.join("stats.json"), &to_json(&report))?;
    write_file(&opts.out_dir.join("stats.txt"), &report.render_text())?;
    Ok(report)
}

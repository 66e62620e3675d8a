use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_entries, write_file, PairSpec, PipelineConfig, PipelineError, RunMode, RunOverrides};
use crate::agents::{run_planner_executor, run_single_agent, trace_id, AgentSpec, RunConfig, SimulatedEnvironment};
use crate::task::{DatasetFormat, SuiteEntry};
use crate::trace::{canonicalize_trace_file, read_trace_dir, TraceRecorder};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub dataset: PathBuf,
    pub format: DatasetFormat,
    pub config: PipelineConfig,
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub seed: u64,
}

/// Written before any trace and rewritten when the run ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub started_at_unix: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at_unix: Option<u64>,
    pub dataset: String,
    pub format: String,
    pub seed: u64,
    pub jobs: usize,
    pub mode: RunMode,
    pub run: RunOverrides,
    pub agents: Vec<AgentSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<PairSpec>,
    /// Relative to the output directory. Absent when nothing ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_file: Option<String>,
    pub planned: usize,
    pub skipped: usize,
    pub executed: usize,
    /// Traces that ended on a transport or authentication error.
    pub errors: usize,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn next_run_number(manifests: &Path) -> Result<u32, PipelineError> {
    let mut max = 0;
    if manifests.exists() {
        for entry in std::fs::read_dir(manifests).map_err(|e| PipelineError::io(manifests, e))? {
            let name = entry.map_err(|e| PipelineError::io(manifests, e))?.file_name();
            let name = name.to_string_lossy();
            if let Some(n) = name
                .strip_prefix("run-")
                .and_then(|s| s.strip_suffix(".json"))
                .and_then(|s| s.parse::<u32>().ok())
            {
                max = max.max(n);
            }
        }
    }
    Ok(max + 1)
}

enum Unit<'a> {
    Single(&'a SuiteEntry, &'a AgentSpec),
    Pair(&'a SuiteEntry, &'a AgentSpec, &'a AgentSpec),
}

impl Unit<'_> {
    fn trace_id(&self) -> String {
        match self {
            Unit::Single(e, a) => trace_id(&e.task.task_id, &a.agent_id),
            Unit::Pair(e, p, x) => trace_id(&e.task.task_id, &format!("{}->{}", p.agent_id, x.agent_id)),
        }
    }
}

/// Runs every (task, agent) or (task, pair) not already finalized under
/// `out_dir/traces`, writing `traces/run-NNNN.jsonl` and
/// `manifests/run-NNNN.json`.
pub fn cmd_run(opts: &RunOptions) -> Result<RunManifest, PipelineError> {
    let config = &opts.config;
    config.validate()?;
    if config.agents.is_empty() {
        return Err(PipelineError::Config("the roster is empty; add [[agents]] to the config".into()));
    }
    if config.mode == RunMode::PlannerExecutor && config.pairs.is_empty() {
        return Err(PipelineError::Config("planner_executor mode needs [[pairs]]".into()));
    }
    let entries = load_entries(&opts.dataset, opts.format)?;

    let traces_dir = opts.out_dir.join("traces");
    let manifests_dir = opts.out_dir.join("manifests");
    for d in [&traces_dir, &manifests_dir] {
        std::fs::create_dir_all(d).map_err(|e| PipelineError::io(d, e))?;
    }
    let done: BTreeSet<String> = read_trace_dir(&traces_dir)?
        .finalized
        .into_iter()
        .map(|t| t.trace_id)
        .collect();

    let mut units = Vec::new();
    for e in &entries {
        match config.mode {
            RunMode::Single => units.extend(config.agents.iter().map(|a| Unit::Single(e, a))),
            RunMode::PlannerExecutor => units.extend(config.pairs.iter().map(|p| {
                Unit::Pair(e, config.agent(&p.planner).expect("validated"), config.agent(&p.executor).expect("validated"))
            })),
        }
    }
    let planned = units.len();
    units.retain(|u| !done.contains(&u.trace_id()));

    let number = next_run_number(&manifests_dir)?;
    let run_id = format!("run-{number:04}");
    let manifest_path = manifests_dir.join(format!("{run_id}.json"));
    let trace_rel = format!("traces/{run_id}.jsonl");
    let mut manifest = RunManifest {
        run_id: run_id.clone(),
        started_at_unix: now(),
        finished_at_unix: None,
        dataset: opts.dataset.display().to_string(),
        format: opts.format.id().to_string(),
        seed: opts.seed,
        jobs: opts.jobs,
        mode: config.mode,
        run: config.run.clone(),
        agents: config.agents.clone(),
        pairs: config.pairs.clone(),
        trace_file: (!units.is_empty()).then(|| trace_rel.clone()),
        planned,
        skipped: planned - units.len(),
        executed: 0,
        errors: 0,
    };
    let write_manifest = |m: &RunManifest| {
        let mut s = serde_json::to_string_pretty(m).expect("manifest serializes");
        s.push('\n');
        write_file(&manifest_path, &s)
    };
    write_manifest(&manifest)?;
    if units.is_empty() {
        manifest.finished_at_unix = Some(now());
        write_manifest(&manifest)?;
        return Ok(manifest);
    }

    let configs: BTreeMap<&str, RunConfig> = entries
        .iter()
        .map(|e| e.task.dataset_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|d| (d, config.run.resolve(d)))
        .collect();
    let trace_path = opts.out_dir.join(&trace_rel);
    let recorder = TraceRecorder::append_to(&trace_path)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<bool, PipelineError>> = pool.install(|| {
        units
            .par_iter()
            .map(|u| {
                let trace = match u {
                    Unit::Single(e, a) => {
                        let env = SimulatedEnvironment::for_task(&e.task);
                        run_single_agent(a, &e.task, &configs[e.task.dataset_id.as_str()], &env, &recorder)
                    }
                    Unit::Pair(e, p, x) => {
                        let env = SimulatedEnvironment::for_task(&e.task);
                        let rc = &configs[e.task.dataset_id.as_str()];
                        run_planner_executor(p, x, &e.task, rc, &env, &recorder)
                    }
                };
                Ok(trace?.error.is_some())
            })
            .collect()
    });
    drop(recorder);

    let mut first_err = None;
    for r in results {
        match r {
            Ok(errored) => {
                manifest.executed += 1;
                manifest.errors += usize::from(errored);
            }
            Err(e) if first_err.is_none() => first_err = Some(e),
            Err(_) => {}
        }
    }
    canonicalize_trace_file(&trace_path)?;
    manifest.finished_at_unix = Some(now());
    write_manifest(&manifest)?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

//! Critical-tool mining: intersect the tool sets of successful traces, then
//! mask the shared tools out of the pool to get an infeasible variant.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::task::{SuiteEntry, SyntheticGroundTruth, Task, ToolSpec};
use crate::trace::{ExecutionTrace, Outcome, ToolStatus};
use crate::Feasibility;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CriticalError {
    #[error("trace {trace_id} ended with {outcome:?}; only successful traces have tool sets")]
    NotSuccessful { trace_id: String, outcome: Outcome },
    #[error("critical_intersection needs at least one tool set")]
    EmptyInput,
    #[error("tool sets belong to different tasks: {expected} and {got}")]
    MixedTasks { expected: String, got: String },
    #[error("task {task_id}: critical tool `{tool}` is not in the pool")]
    NotInPool { task_id: String, tool: String },
    #[error("task {task_id}: empty critical set, nothing to mask")]
    EmptyCritical { task_id: String },
}

/// Distinct tools one agent actually reached while solving a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSet {
    pub task_id: String,
    pub agent_id: String,
    pub tools: BTreeSet<String>,
}

/// The tools of a successful trace. Calls that returned "not found" never
/// reached a tool and are left out.
pub fn tool_set(trace: &ExecutionTrace) -> Result<ToolSet, CriticalError> {
    if trace.outcome != Outcome::Success {
        return Err(CriticalError::NotSuccessful {
            trace_id: trace.trace_id.clone(),
            outcome: trace.outcome,
        });
    }
    Ok(ToolSet {
        task_id: trace.task_id.clone(),
        agent_id: trace.agent_id.clone(),
        tools: trace
            .steps
            .iter()
            .filter(|s| s.status != ToolStatus::NotFound)
            .map(|s| s.tool_name.clone())
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticalToolSet {
    pub task_id: String,
    pub tools: BTreeSet<String>,
    pub contributing_agents: Vec<String>,
}

impl CriticalToolSet {
    /// "No critical tools identified."
    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }
}

pub fn critical_intersection(sets: &[ToolSet]) -> Result<CriticalToolSet, CriticalError> {
    let (first, rest) = sets.split_first().ok_or(CriticalError::EmptyInput)?;
    let mut tools = first.tools.clone();
    for s in rest {
        if s.task_id != first.task_id {
            return Err(CriticalError::MixedTasks {
                expected: first.task_id.clone(),
                got: s.task_id.clone(),
            });
        }
        tools.retain(|t| s.tools.contains(t));
    }
    let mut contributing_agents: Vec<String> = sets.iter().map(|s| s.agent_id.clone()).collect();
    contributing_agents.sort();
    contributing_agents.dedup();
    Ok(CriticalToolSet {
        task_id: first.task_id.clone(),
        tools,
        contributing_agents,
    })
}

/// A task whose critical tools have been removed from its pool. `task`
/// carries the new id and the remaining pool.
#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibleTask {
    pub task: Task,
    pub source_task_id: String,
    pub masked_tools: BTreeSet<String>,
}

impl InfeasibleTask {
    pub fn remaining_pool(&self) -> &[ToolSpec] {
        &self.task.tool_pool
    }

    pub fn feasibility_label(&self) -> Feasibility {
        Feasibility::Infeasible
    }

    /// Every tool was critical, so nothing is left to call.
    pub fn is_empty_pool(&self) -> bool {
        self.task.tool_pool.is_empty()
    }

    pub fn to_suite_entry(&self) -> SuiteEntry {
        SuiteEntry {
            task: self.task.clone(),
            label: Feasibility::Infeasible,
            source_task_id: Some(self.source_task_id.clone()),
            masked_tools: self.masked_tools.clone(),
        }
    }
}

pub fn infeasible_task_id(source_task_id: &str) -> String {
    format!("{source_task_id}-infeasible")
}

pub fn mask_tools(task: &Task, critical: &CriticalToolSet) -> Result<InfeasibleTask, CriticalError> {
    if critical.tools.is_empty() {
        return Err(CriticalError::EmptyCritical {
            task_id: task.task_id.clone(),
        });
    }
    let names = task.tool_names();
    if let Some(tool) = critical.tools.iter().find(|t| !names.contains(*t)) {
        return Err(CriticalError::NotInPool {
            task_id: task.task_id.clone(),
            tool: tool.clone(),
        });
    }
    let mut variant = task.clone();
    variant.task_id = infeasible_task_id(&task.task_id);
    variant.tool_pool.retain(|t| !critical.tools.contains(&t.name));
    Ok(InfeasibleTask {
        task: variant,
        source_task_id: task.task_id.clone(),
        masked_tools: critical.tools.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetentionRule {
    /// Every roster agent must have succeeded.
    AllSucceeded,
    /// At least this many roster agents succeeded; only their traces are
    /// intersected. For ablations.
    AnyK(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionPolicy {
    pub rule: RetentionRule,
    /// Also require identical tool sets across the contributing agents.
    #[serde(default)]
    pub strict_identical: bool,
}

impl Default for RetentionPolicy {
    fn default() -> Self {
        Self {
            rule: RetentionRule::AllSucceeded,
            strict_identical: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    MissingTrace,
    NotAllSucceeded,
    EmptyTrace,
    SetsDiffer,
    EmptyIntersection,
    NotInPool,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("reason serializes");
        f.write_str(s.as_str().unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub task_id: String,
    pub reason: SkipReason,
    pub detail: String,
}

/// A successful trace with no usable tool calls; kept out of intersections.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedTrace {
    pub task_id: String,
    pub agent_id: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuiteBuild {
    pub suite: Vec<InfeasibleTask>,
    /// One per retained task, same order as `suite`.
    pub critical: Vec<CriticalToolSet>,
    pub skipped: Vec<SkipEntry>,
    pub excluded_traces: Vec<ExcludedTrace>,
}

impl SuiteBuild {
    pub fn skip_counts(&self) -> BTreeMap<SkipReason, usize> {
        let mut out = BTreeMap::new();
        for s in &self.skipped {
            *out.entry(s.reason).or_insert(0) += 1;
        }
        out
    }
}

#[allow(clippy::large_enum_variant)]
enum TaskResult {
    Kept(InfeasibleTask, CriticalToolSet, Vec<ExcludedTrace>),
    Skipped(SkipEntry, Vec<ExcludedTrace>),
}

fn skip(task: &Task, reason: SkipReason, detail: impl Into<String>, excluded: Vec<ExcludedTrace>) -> TaskResult {
    TaskResult::Skipped(
        SkipEntry {
            task_id: task.task_id.clone(),
            reason,
            detail: detail.into(),
        },
        excluded,
    )
}

fn build_one(
    task: &Task,
    traces: &BTreeMap<(String, String), ExecutionTrace>,
    roster: &[String],
    policy: RetentionPolicy,
) -> TaskResult {
    let mut successes = Vec::new();
    let mut missing = Vec::new();
    let mut failed = Vec::new();
    for agent in roster {
        match traces.get(&(task.task_id.clone(), agent.clone())) {
            None => missing.push(agent.as_str()),
            Some(t) if t.outcome == Outcome::Success => successes.push(t),
            Some(_) => failed.push(agent.as_str()),
        }
    }
    let need = match policy.rule {
        RetentionRule::AllSucceeded => roster.len(),
        RetentionRule::AnyK(k) => k.max(1),
    };
    if policy.rule == RetentionRule::AllSucceeded && !missing.is_empty() {
        return skip(task, SkipReason::MissingTrace, missing.join(", "), vec![]);
    }
    if successes.len() < need || successes.is_empty() {
        return skip(
            task,
            SkipReason::NotAllSucceeded,
            format!("{}/{} succeeded", successes.len(), roster.len()),
            vec![],
        );
    }

    let mut sets = Vec::with_capacity(successes.len());
    let mut excluded = Vec::new();
    for trace in successes {
        let set = tool_set(trace).expect("filtered to successes");
        if set.tools.is_empty() {
            excluded.push(ExcludedTrace {
                task_id: task.task_id.clone(),
                agent_id: trace.agent_id.clone(),
            });
        } else {
            sets.push(set);
        }
    }
    if sets.is_empty() {
        return skip(task, SkipReason::EmptyTrace, "no successful trace called a tool", excluded);
    }
    if policy.strict_identical && sets.windows(2).any(|w| w[0].tools != w[1].tools) {
        return skip(task, SkipReason::SetsDiffer, "agents used different tool sets", excluded);
    }
    let critical = critical_intersection(&sets).expect("non-empty, single task");
    if critical.is_empty() {
        return skip(task, SkipReason::EmptyIntersection, "no tool shared by every trace", excluded);
    }
    match mask_tools(task, &critical) {
        Ok(variant) => TaskResult::Kept(variant, critical, excluded),
        Err(e) => skip(task, SkipReason::NotInPool, e.to_string(), excluded),
    }
}

/// Runs retention, intersection, and masking for every task. Skips are
/// returned as data, in task order.
pub fn build_infeasible_suite(
    tasks: &[Task],
    traces: &BTreeMap<(String, String), ExecutionTrace>,
    roster: &[String],
    policy: RetentionPolicy,
) -> SuiteBuild {
    let results: Vec<TaskResult> = tasks
        .par_iter()
        .map(|t| build_one(t, traces, roster, policy))
        .collect();
    let mut out = SuiteBuild::default();
    for r in results {
        match r {
            TaskResult::Kept(variant, critical, excluded) => {
                out.suite.push(variant);
                out.critical.push(critical);
                out.excluded_traces.extend(excluded);
            }
            TaskResult::Skipped(entry, excluded) => {
                out.skipped.push(entry);
                out.excluded_traces.extend(excluded);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecovery {
    pub task_id: String,
    pub identified: BTreeSet<String>,
    pub planted: BTreeSet<String>,
    /// Identified tools that are planted and have no clone left in the pool.
    pub correct: BTreeSet<String>,
    /// Masking removed every member of some required capability group.
    pub genuinely_infeasible: bool,
}

/// How well mined critical sets match planted ground truth on a synthetic
/// suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub tasks_total: usize,
    pub retained: usize,
    pub exact_matches: usize,
    pub identified_tools: usize,
    pub correct_tools: usize,
    pub planted_tools: usize,
    /// `correct_tools / identified_tools`; 1.0 when nothing was identified.
    pub precision: f64,
    /// Correct tools over planted tools of the retained tasks.
    pub recall: f64,
    pub exact_match_rate: f64,
    pub genuinely_infeasible_rate: f64,
    pub per_task: Vec<TaskRecovery>,
}

impl RecoveryReport {
    /// Some identified tool is a false critical (typically a cloned one).
    pub fn degraded(&self) -> bool {
        self.correct_tools < self.identified_tools
    }
}

impl fmt::Display for RecoveryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "retained        {}/{}", self.retained, self.tasks_total)?;
        writeln!(f, "exact matches   {} ({:.3})", self.exact_matches, self.exact_match_rate)?;
        writeln!(
            f,
            "tool precision  {:.3} ({}/{})",
            self.precision, self.correct_tools, self.identified_tools
        )?;
        writeln!(f, "tool recall     {:.3}", self.recall)?;
        write!(f, "infeasible      {:.3}", self.genuinely_infeasible_rate)?;
        if self.degraded() {
            write!(f, "\nwarning: precision below 1.0; some masked tools had functional clones")?;
        }
        Ok(())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Compares `build` against planted sets. Tasks are looked up by source id.
pub fn recovery_report(
    build: &SuiteBuild,
    tasks: &[Task],
    planted: &BTreeMap<String, BTreeSet<String>>,
) -> RecoveryReport {
    let by_id: BTreeMap<&str, &Task> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let per_task: Vec<TaskRecovery> = build
        .suite
        .iter()
        .map(|v| {
            let planted_set = planted.get(&v.source_task_id).cloned().unwrap_or_default();
            let gt = by_id
                .get(v.source_task_id.as_str())
                .and_then(|t| SyntheticGroundTruth::from_task(t))
                .unwrap_or_default();
            let irreplaceable = gt.indispensable();
            let correct = v
                .masked_tools
                .iter()
                .filter(|t| planted_set.contains(*t) && irreplaceable.contains(*t))
                .cloned()
                .collect();
            let genuinely_infeasible = gt
                .required
                .iter()
                .any(|g| g.iter().all(|t| v.masked_tools.contains(t)));
            TaskRecovery {
                task_id: v.source_task_id.clone(),
                identified: v.masked_tools.clone(),
                planted: planted_set,
                correct,
                genuinely_infeasible,
            }
        })
        .collect();
    let retained = per_task.len();
    let exact_matches = per_task.iter().filter(|r| r.identified == r.planted).count();
    let identified_tools = per_task.iter().map(|r| r.identified.len()).sum();
    let correct_tools = per_task.iter().map(|r| r.correct.len()).sum();
    let planted_tools = per_task.iter().map(|r| r.planted.len()).sum();
    let infeasible = per_task.iter().filter(|r| r.genuinely_infeasible).count();
    RecoveryReport {
        tasks_total: tasks.len(),
        retained,
        exact_matches,
        identified_tools,
        correct_tools,
        planted_tools,
        precision: ratio(correct_tools, identified_tools),
        recall: ratio(correct_tools, planted_tools),
        exact_match_rate: ratio(exact_matches, retained),
        genuinely_infeasible_rate: ratio(infeasible, retained),
        per_task,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::sample_task;
    use crate::trace::ToolCallStep;
    use proptest::prelude::*;

    fn set(agent: &str, tools: &[&str]) -> ToolSet {
        ToolSet {
            task_id: "t".into(),
            agent_id: agent.into(),
            tools: tools.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn names(tools: &[&str]) -> BTreeSet<String> {
        tools.iter().map(|s| s.to_string()).collect()
    }

    fn trace(task: &str, agent: &str, outcome: Outcome, tools: &[&str]) -> ExecutionTrace {
        ExecutionTrace {
            trace_id: format!("{task}::{agent}"),
            task_id: task.into(),
            agent_id: agent.into(),
            steps: tools
                .iter()
                .enumerate()
                .map(|(i, n)| ToolCallStep {
                    turn: i as u32 + 1,
                    tool_name: n.to_string(),
                    arguments: "{}".into(),
                    result: "ok".into(),
                    status: ToolStatus::Ok,
                    tokens_in: 1,
                    tokens_out: 1,
                })
                .collect(),
            messages: vec![],
            outcome,
            decision: Feasibility::Feasible,
            stop_reason: None,
            error: None,
        }
    }

    #[test]
    fn tool_set_dedups() {
        let t = trace("t", "x", Outcome::Success, &["a", "b", "a", "c"]);
        assert_eq!(tool_set(&t).unwrap().tools, names(&["a", "b", "c"]));
        let failed = trace("t", "x", Outcome::Failure, &["a"]);
        assert!(matches!(tool_set(&failed), Err(CriticalError::NotSuccessful { .. })));
    }

    #[test]
    fn intersection_examples() {
        let c = critical_intersection(&[set("1", &["a", "b", "c"]), set("2", &["b", "c", "d"]), set("3", &["b", "c"])])
            .unwrap();
        assert_eq!(c.tools, names(&["b", "c"]));
        assert_eq!(c.contributing_agents, ["1", "2", "3"]);
        assert_eq!(critical_intersection(&[set("1", &["a", "b"])]).unwrap().tools, names(&["a", "b"]));
        assert!(critical_intersection(&[set("1", &["a"]), set("2", &["b"])]).unwrap().is_empty());
        assert_eq!(critical_intersection(&[]), Err(CriticalError::EmptyInput));
        let mut other = set("2", &["a"]);
        other.task_id = "u".into();
        assert!(matches!(
            critical_intersection(&[set("1", &["a"]), other]),
            Err(CriticalError::MixedTasks { .. })
        ));
    }

    fn crit(tools: &[&str]) -> CriticalToolSet {
        CriticalToolSet {
            task_id: "t".into(),
            tools: names(tools),
            contributing_agents: vec!["x".into()],
        }
    }

    #[test]
    fn mask_examples() {
        let task = sample_task("t", &["a", "b", "c", "d"]);
        let v = mask_tools(&task, &crit(&["b", "c"])).unwrap();
        assert_eq!(v.task.tool_names(), names(&["a", "d"]));
        assert_eq!(v.masked_tools, names(&["b", "c"]));
        assert_eq!(v.source_task_id, "t");
        assert_ne!(v.task.task_id, "t");
        assert_eq!(task.tool_pool.len(), 4);

        let single = sample_task("t", &["a"]);
        assert!(mask_tools(&single, &crit(&["a"])).unwrap().is_empty_pool());
        assert!(matches!(mask_tools(&task, &crit(&["z"])), Err(CriticalError::NotInPool { .. })));
        assert!(matches!(mask_tools(&task, &crit(&[])), Err(CriticalError::EmptyCritical { .. })));
    }

    #[test]
    fn suite_retention() {
        let tasks: Vec<Task> = ["t1", "t2", "t3"].iter().map(|id| sample_task(id, &["a", "b", "c"])).collect();
        let roster: Vec<String> = vec!["x".into(), "y".into(), "z".into()];
        let mut traces = BTreeMap::new();
        for agent in &roster {
            traces.insert(("t1".into(), agent.clone()), trace("t1", agent, Outcome::Success, &["a", "b"]));
            traces.insert(("t2".into(), agent.clone()), trace("t2", agent, Outcome::Success, &["b", "c"]));
            let outcome = if agent == "z" { Outcome::Failure } else { Outcome::Success };
            traces.insert(("t3".into(), agent.clone()), trace("t3", agent, outcome, &["a"]));
        }
        let build = build_infeasible_suite(&tasks, &traces, &roster, RetentionPolicy::default());
        assert_eq!(build.suite.len(), 2);
        assert_eq!(build.skipped.len(), 1);
        assert_eq!(build.skipped[0].reason, SkipReason::NotAllSucceeded);

        let relaxed = RetentionPolicy {
            rule: RetentionRule::AnyK(2),
            strict_identical: false,
        };
        assert_eq!(build_infeasible_suite(&tasks, &traces, &roster, relaxed).suite.len(), 3);
    }

    #[test]
    fn zero_step_traces_are_excluded_and_logged() {
        let tasks = vec![sample_task("t", &["a", "b"])];
        let roster: Vec<String> = vec!["x".into(), "y".into()];
        let mut traces = BTreeMap::new();
        traces.insert(("t".into(), "x".into()), trace("t", "x", Outcome::Success, &["a"]));
        traces.insert(("t".into(), "y".into()), trace("t", "y", Outcome::Success, &[]));
        let build = build_infeasible_suite(&tasks, &traces, &roster, RetentionPolicy::default());
        assert_eq!(build.suite[0].masked_tools, names(&["a"]));
        assert_eq!(build.excluded_traces.len(), 1);

        traces.insert(("t".into(), "x".into()), trace("t", "x", Outcome::Success, &[]));
        let build = build_infeasible_suite(&tasks, &traces, &roster, RetentionPolicy::default());
        assert_eq!(build.skipped[0].reason, SkipReason::EmptyTrace);
    }

    #[test]
    fn strict_policy_rejects_differing_sets() {
        let tasks = vec![sample_task("t", &["a", "b"])];
        let roster: Vec<String> = vec!["x".into(), "y".into()];
        let mut traces = BTreeMap::new();
        traces.insert(("t".into(), "x".into()), trace("t", "x", Outcome::Success, &["a"]));
        traces.insert(("t".into(), "y".into()), trace("t", "y", Outcome::Success, &["a", "b"]));
        let strict = RetentionPolicy {
            strict_identical: true,
            ..RetentionPolicy::default()
        };
        let build = build_infeasible_suite(&tasks, &traces, &roster, strict);
        assert_eq!(build.skipped[0].reason, SkipReason::SetsDiffer);
        assert_eq!(SkipReason::SetsDiffer.to_string(), "sets_differ");
    }

    fn arb_sets() -> impl Strategy<Value = Vec<BTreeSet<u8>>> {
        prop::collection::vec(prop::collection::btree_set(0u8..10, 0..8), 1..6)
    }

    fn to_sets(raw: &[BTreeSet<u8>]) -> Vec<ToolSet> {
        raw.iter()
            .enumerate()
            .map(|(i, s)| ToolSet {
                task_id: "t".into(),
                agent_id: format!("a{i}"),
                tools: s.iter().map(|n| format!("tool{n}")).collect(),
            })
            .collect()
    }

    proptest! {
        #[test]
        fn intersection_is_a_subset_of_every_input(raw in arb_sets()) {
            let sets = to_sets(&raw);
            let c = critical_intersection(&sets).unwrap();
            for s in &sets {
                prop_assert!(c.tools.is_subset(&s.tools));
            }
        }

        #[test]
        fn intersection_ignores_order_and_duplicates(raw in arb_sets(), seed in any::<u64>()) {
            let sets = to_sets(&raw);
            let base = critical_intersection(&sets).unwrap().tools;
            let mut shuffled = sets.clone();
            let n = shuffled.len();
            shuffled.rotate_left((seed as usize) % n);
            shuffled.push(shuffled[0].clone());
            prop_assert_eq!(critical_intersection(&shuffled).unwrap().tools, base);
        }

        #[test]
        fn masking_partitions_the_pool(pool in prop::collection::btree_set(0u8..12, 1..10), pick in any::<u16>()) {
            let names: Vec<String> = pool.iter().map(|n| format!("tool{n}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let task = sample_task("t", &refs);
            let critical: Vec<&str> = refs
                .iter()
                .enumerate()
                .filter(|(i, _)| pick & (1 << (i % 16)) != 0)
                .map(|(_, n)| *n)
                .collect();
            prop_assume!(!critical.is_empty());
            let v = mask_tools(&task, &crit(&critical)).unwrap();
            let remaining = v.task.tool_names();
            prop_assert!(v.masked_tools.is_disjoint(&remaining));
            let union: BTreeSet<String> = v.masked_tools.union(&remaining).cloned().collect();
            prop_assert_eq!(union, task.tool_names());
        }
    }
}

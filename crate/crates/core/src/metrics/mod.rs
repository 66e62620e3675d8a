//! Feasibility-aware metrics: false continue rate, success rate, token cost
//! split by stop/failure, FASS, false positives, and the SR×FCR frontier.

mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::task::SuiteEntry;
use crate::trace::{total_tokens, ExecutionTrace, Outcome};
use crate::Feasibility;

pub use report::{AgentReport, MacroCell, MetricCell, MetricReport};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub task_id: String,
    pub dataset_id: String,
    pub agent_id: String,
    pub label: Feasibility,
    pub decision: Feasibility,
    pub success: bool,
    pub token_cost: u64,
}

impl EvaluationRecord {
    /// Pairs a suite entry with the trace of one agent on it. A run counts
    /// as a success only when the trace finished with outcome `success`.
    pub fn from_trace(entry: &SuiteEntry, trace: &ExecutionTrace) -> Self {
        Self {
            task_id: entry.task.task_id.clone(),
            dataset_id: entry.task.dataset_id.clone(),
            agent_id: trace.agent_id.clone(),
            label: entry.label,
            decision: trace.decision,
            success: trace.outcome == Outcome::Success,
            token_cost: total_tokens(trace).total,
        }
    }

    fn is_false_positive(&self) -> bool {
        self.label == Feasibility::Infeasible && self.decision == Feasibility::Feasible && self.success
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("no {0} records to compute the metric over")]
    EmptySupport(&'static str),
}

fn with_label(records: &[EvaluationRecord], label: Feasibility) -> impl Iterator<Item = &EvaluationRecord> {
    records.iter().filter(move |r| r.label == label)
}

/// Share of infeasible tasks the agent treated as feasible. Feasible-label
/// records are ignored.
pub fn false_continue_rate(records: &[EvaluationRecord]) -> Result<f64, MetricError> {
    let (mut n, mut cont) = (0usize, 0usize);
    for r in with_label(records, Feasibility::Infeasible) {
        n += 1;
        cont += usize::from(r.decision == Feasibility::Feasible);
    }
    if n == 0 {
        return Err(MetricError::EmptySupport("infeasible"));
    }
    Ok(cont as f64 / n as f64)
}

/// Share of infeasible tasks the agent stopped on; `1 - FCR`.
pub fn stop_rate(records: &[EvaluationRecord]) -> Result<f64, MetricError> {
    let (mut n, mut stopped) = (0usize, 0usize);
    for r in with_label(records, Feasibility::Infeasible) {
        n += 1;
        stopped += usize::from(r.decision == Feasibility::Infeasible);
    }
    if n == 0 {
        return Err(MetricError::EmptySupport("infeasible"));
    }
    Ok(stopped as f64 / n as f64)
}

/// Share of feasible tasks completed. Wrongly stopping counts as a miss.
pub fn success_rate(records: &[EvaluationRecord]) -> Result<f64, MetricError> {
    let (mut n, mut ok) = (0usize, 0usize);
    for r in with_label(records, Feasibility::Feasible) {
        n += 1;
        ok += usize::from(r.success && r.decision == Feasibility::Feasible);
    }
    if n == 0 {
        return Err(MetricError::EmptySupport("feasible"));
    }
    Ok(ok as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenCosts {
    /// Mean cost over correct stops on infeasible tasks.
    pub tc_early_stop: Option<f64>,
    /// Mean cost over continued-and-failed runs on infeasible tasks.
    pub tc_task_failure: Option<f64>,
    pub ratio: Option<f64>,
    pub stops: usize,
    pub failures: usize,
    /// Completed infeasible runs; in neither mean.
    pub false_positives: usize,
}

fn mean(sum: u128, n: usize) -> Option<f64> {
    (n > 0).then(|| sum as f64 / n as f64)
}

pub(crate) fn ratio_of(fail: Option<f64>, stop: Option<f64>) -> Option<f64> {
    match (fail, stop) {
        (Some(f), Some(s)) if s > 0.0 => Some(f / s),
        _ => None,
    }
}

pub fn token_costs(records: &[EvaluationRecord]) -> TokenCosts {
    let (mut stop_sum, mut fail_sum) = (0u128, 0u128);
    let mut out = TokenCosts::default();
    for r in with_label(records, Feasibility::Infeasible) {
        match (r.decision, r.success) {
            (Feasibility::Infeasible, _) => {
                out.stops += 1;
                stop_sum += u128::from(r.token_cost);
            }
            (Feasibility::Feasible, false) => {
                out.failures += 1;
                fail_sum += u128::from(r.token_cost);
            }
            (Feasibility::Feasible, true) => out.false_positives += 1,
        }
    }
    out.tc_early_stop = mean(stop_sum, out.stops);
    out.tc_task_failure = mean(fail_sum, out.failures);
    out.ratio = ratio_of(out.tc_task_failure, out.tc_early_stop);
    out
}

/// Binary accuracy: stops on infeasible tasks and completions on feasible
/// ones are correct, everything else is not.
pub fn fass(records: &[EvaluationRecord]) -> Result<f64, MetricError> {
    if records.is_empty() {
        return Err(MetricError::EmptySupport("evaluation"));
    }
    Ok(fass_correct(records) as f64 / records.len() as f64)
}

pub fn fass_correct(records: &[EvaluationRecord]) -> usize {
    records
        .iter()
        .filter(|r| match r.label {
            Feasibility::Infeasible => r.decision == Feasibility::Infeasible,
            Feasibility::Feasible => r.decision == Feasibility::Feasible && r.success,
        })
        .count()
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FalsePositiveCounts {
    pub per_dataset: BTreeMap<String, usize>,
    pub total: usize,
}

/// Infeasible tasks completed anyway, grouped by dataset. Every dataset
/// with infeasible records gets an entry, zero included.
pub fn false_positive_count(records: &[EvaluationRecord]) -> FalsePositiveCounts {
    let mut out = FalsePositiveCounts::default();
    for r in with_label(records, Feasibility::Infeasible) {
        let slot = out.per_dataset.entry(r.dataset_id.clone()).or_insert(0);
        if r.is_false_positive() {
            *slot += 1;
            out.total += 1;
        }
    }
    out
}

/// Unweighted mean, as used for the "Avg." columns.
pub fn macro_average(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Per-dataset metric values averaged without weighting by dataset size.
pub fn macro_by_dataset(
    records: &[EvaluationRecord],
    metric: impl Fn(&[EvaluationRecord]) -> Result<f64, MetricError>,
) -> Option<f64> {
    let mut groups: BTreeMap<&str, Vec<EvaluationRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.dataset_id.as_str()).or_default().push(r.clone());
    }
    let values: Vec<f64> = groups.values().filter_map(|g| metric(g).ok()).collect();
    macro_average(&values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub agent_id: String,
    pub sr: f64,
    pub fcr: f64,
}

impl FrontierPoint {
    pub fn new(agent_id: impl Into<String>, sr: f64, fcr: f64) -> Self {
        Self {
            agent_id: agent_id.into(),
            sr,
            fcr,
        }
    }

    /// At least as good on both axes and strictly better on one.
    pub fn dominates(&self, other: &Self) -> bool {
        self.sr >= other.sr && self.fcr <= other.fcr && (self.sr > other.sr || self.fcr < other.fcr)
    }
}

/// Points not dominated by any other (higher SR, lower FCR is better),
/// ordered by descending SR. Exact duplicates are all kept.
pub fn pareto_frontier(points: &[FrontierPoint]) -> Vec<FrontierPoint> {
    let mut sorted: Vec<&FrontierPoint> = points.iter().collect();
    sorted.sort_by(|a, b| b.sr.total_cmp(&a.sr).then(a.fcr.total_cmp(&b.fcr)));
    let mut out: Vec<FrontierPoint> = Vec::new();
    // Sweep by descending SR; a point survives if its FCR beats every
    // point with strictly higher SR and ties the best at equal SR.
    let mut best_fcr_above = f64::INFINITY;
    let mut i = 0;
    while i < sorted.len() {
        let sr = sorted[i].sr;
        let mut j = i;
        while j < sorted.len() && sorted[j].sr == sr {
            j += 1;
        }
        let group_best = sorted[i].fcr;
        if group_best < best_fcr_above {
            out.extend(
                sorted[i..j]
                    .iter()
                    .filter(|p| p.fcr == group_best)
                    .map(|p| (*p).clone()),
            );
            best_fcr_above = group_best;
        }
        i = j;
    }
    out
}

/// Percentage with one decimal, halves rounded up.
pub fn pct(fraction: f64) -> String {
    format!("{:.1}", round_half_up(fraction * 100.0, 1))
}

/// Rounds half-up to `decimals` places for display.
pub fn round_half_up(value: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = value * scale;
    let floor = scaled.floor();
    let bumped = if scaled - floor >= 0.5 - 1e-9 { floor + 1.0 } else { floor };
    bumped / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(label: Feasibility, decision: Feasibility, success: bool, cost: u64) -> EvaluationRecord {
        EvaluationRecord {
            task_id: "t".into(),
            dataset_id: "d".into(),
            agent_id: "a".into(),
            label,
            decision,
            success,
            token_cost: cost,
        }
    }

    use Feasibility::{Feasible as F, Infeasible as I};

    #[test]
    fn fcr_examples() {
        let none: Vec<_> = (0..10).map(|_| rec(I, I, false, 1)).collect();
        assert_eq!(false_continue_rate(&none).unwrap(), 0.0);
        let four: Vec<_> = (0..10).map(|i| rec(I, if i < 4 { F } else { I }, false, 1)).collect();
        assert_eq!(false_continue_rate(&four).unwrap(), 0.4);
        assert_eq!(false_continue_rate(&[]), Err(MetricError::EmptySupport("infeasible")));
    }

    #[test]
    fn macro_of_per_dataset_fcrs() {
        let avg = macro_average(&[0.238, 0.130, 0.217, 0.355]).unwrap();
        assert_eq!(pct(avg), "23.5");
    }

    #[test]
    fn sr_examples() {
        let all: Vec<_> = (0..5).map(|_| rec(F, F, true, 1)).collect();
        assert_eq!(success_rate(&all).unwrap(), 1.0);
        let two: Vec<_> = (0..8).map(|i| rec(F, F, i < 2, 1)).collect();
        assert_eq!(success_rate(&two).unwrap(), 0.25);
        // a wrong STOP on a feasible task is a miss even if flagged success
        assert_eq!(success_rate(&[rec(F, I, true, 1)]).unwrap(), 0.0);
    }

    #[test]
    fn token_cost_examples() {
        let tc = token_costs(&[rec(I, I, false, 1000), rec(I, I, false, 3000), rec(I, F, false, 8000)]);
        assert_eq!((tc.tc_early_stop, tc.tc_task_failure, tc.ratio), (Some(2000.0), Some(8000.0), Some(4.0)));
        let eq = token_costs(&[rec(I, I, false, 500), rec(I, F, false, 500), rec(I, F, true, 9)]);
        assert_eq!(eq.ratio, Some(1.0));
        assert_eq!(eq.false_positives, 1);
        assert_eq!(token_costs(&[rec(I, I, false, 5)]).ratio, None);
    }

    #[test]
    fn fass_examples() {
        assert_eq!(fass(&[rec(I, I, false, 0), rec(I, I, false, 0)]).unwrap(), 1.0);
        let mixed = [rec(F, F, true, 0), rec(F, F, false, 0), rec(I, I, false, 0), rec(I, F, false, 0)];
        assert_eq!(fass(&mixed).unwrap(), 0.5);
        assert!(fass(&[]).is_err());
    }

    #[test]
    fn false_positive_examples() {
        assert_eq!(false_positive_count(&[rec(I, F, false, 0)]).total, 0);
        let mut recs: Vec<_> = (0..50).map(|i| rec(I, F, i < 3, 0)).collect();
        assert_eq!(false_positive_count(&recs).total, 3);
        for (ds, n) in [("bfcl", 106), ("stb", 39), ("apibank", 40), ("tau", 38)] {
            recs = (0..n)
                .map(|_| EvaluationRecord {
                    dataset_id: ds.into(),
                    ..rec(I, F, true, 0)
                })
                .chain(recs)
                .collect();
        }
        let counts = false_positive_count(&recs);
        assert_eq!(counts.per_dataset["bfcl"] + counts.per_dataset["stb"] + counts.per_dataset["apibank"] + counts.per_dataset["tau"], 223);
    }

    #[test]
    fn frontier_examples() {
        let one = [FrontierPoint::new("a", 0.5, 0.5)];
        assert_eq!(pareto_frontier(&one), one);
        let two = [FrontierPoint::new("a", 0.6, 0.2), FrontierPoint::new("b", 0.5, 0.3)];
        assert_eq!(pareto_frontier(&two), [two[0].clone()]);
        let ties = [FrontierPoint::new("a", 0.6, 0.2), FrontierPoint::new("b", 0.6, 0.2)];
        assert_eq!(pareto_frontier(&ties).len(), 2);
    }

    #[test]
    fn pct_rounds_half_up() {
        assert_eq!(pct(0.2345), "23.5");
        assert_eq!(pct(0.2344), "23.4");
        assert_eq!(pct(0.0), "0.0");
        assert_eq!(pct(1.0), "100.0");
        assert_eq!(round_half_up(0.9765, 3), 0.977);
    }

    fn brute_frontier(points: &[FrontierPoint]) -> Vec<FrontierPoint> {
        points
            .iter()
            .filter(|p| !points.iter().any(|q| q.dominates(p)))
            .cloned()
            .collect()
    }

    fn arb_points() -> impl Strategy<Value = Vec<FrontierPoint>> {
        prop::collection::vec((0u8..6, 0u8..6), 1..=12).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (s, f))| FrontierPoint::new(format!("p{i}"), s as f64 / 5.0, f as f64 / 5.0))
                .collect()
        })
    }

    fn arb_records() -> impl Strategy<Value = Vec<EvaluationRecord>> {
        prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>(), 0u64..10_000, 0u8..3), 1..60).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (l, d, s, c, ds))| EvaluationRecord {
                    task_id: format!("t{i}"),
                    dataset_id: format!("d{ds}"),
                    agent_id: "a".into(),
                    label: if l { F } else { I },
                    decision: if d { F } else { I },
                    success: s && d,
                    token_cost: c,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn frontier_matches_pairwise_dominance(points in arb_points()) {
            let mut got = pareto_frontier(&points);
            let mut want = brute_frontier(&points);
            for w in got.windows(2) {
                prop_assert!(w[0].sr >= w[1].sr);
            }
            got.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));
            want.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));
            prop_assert_eq!(got, want);
        }

        #[test]
        fn fcr_plus_stop_rate_is_one(records in arb_records()) {
            if let (Ok(f), Ok(s)) = (false_continue_rate(&records), stop_rate(&records)) {
                prop_assert!((f + s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn fass_counts_correct_cells(records in arb_records()) {
            let v = fass(&records).unwrap();
            prop_assert!(v <= 1.0);
            let k = v * records.len() as f64;
            prop_assert!((k - k.round()).abs() < 1e-9);
            prop_assert_eq!(k.round() as usize, fass_correct(&records));
        }

        #[test]
        fn rates_ignore_order(mut records in arb_records()) {
            let before = (false_continue_rate(&records).ok(), success_rate(&records).ok(), fass(&records).ok());
            records.reverse();
            let after = (false_continue_rate(&records).ok(), success_rate(&records).ok(), fass(&records).ok());
            prop_assert_eq!(before, after);
        }
    }
}

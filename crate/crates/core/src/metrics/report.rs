use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    false_continue_rate, false_positive_count, fass, macro_average, pareto_frontier, pct, ratio_of,
    success_rate, token_costs, EvaluationRecord, FrontierPoint,
};
use crate::Feasibility;

/// Metrics over one slice of records (one dataset, or all pooled).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricCell {
    pub records: usize,
    pub feasible: usize,
    pub infeasible: usize,
    pub fcr: Option<f64>,
    pub sr: Option<f64>,
    pub tc_early_stop: Option<f64>,
    pub tc_task_failure: Option<f64>,
    pub ratio: Option<f64>,
    pub fass: Option<f64>,
    pub false_positives: usize,
    pub stops: usize,
    pub failures: usize,
}

impl MetricCell {
    pub fn from_records(records: &[EvaluationRecord]) -> Self {
        let tc = token_costs(records);
        Self {
            records: records.len(),
            feasible: records.iter().filter(|r| r.label == Feasibility::Feasible).count(),
            infeasible: records.iter().filter(|r| r.label == Feasibility::Infeasible).count(),
            fcr: false_continue_rate(records).ok(),
            sr: success_rate(records).ok(),
            tc_early_stop: tc.tc_early_stop,
            tc_task_failure: tc.tc_task_failure,
            ratio: tc.ratio,
            fass: fass(records).ok(),
            false_positives: false_positive_count(records).total,
            stops: tc.stops,
            failures: tc.failures,
        }
    }
}

/// Unweighted means of the per-dataset cells. The ratio is the ratio of
/// the averaged costs, not an average of ratios.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MacroCell {
    pub fcr: Option<f64>,
    pub sr: Option<f64>,
    pub tc_early_stop: Option<f64>,
    pub tc_task_failure: Option<f64>,
    pub ratio: Option<f64>,
    pub fass: Option<f64>,
    pub false_positives: usize,
}

impl MacroCell {
    fn from_cells<'a>(cells: impl Iterator<Item = &'a MetricCell> + Clone) -> Self {
        let avg = |f: fn(&MetricCell) -> Option<f64>| {
            let v: Vec<f64> = cells.clone().filter_map(f).collect();
            macro_average(&v)
        };
        let tc_early_stop = avg(|c| c.tc_early_stop);
        let tc_task_failure = avg(|c| c.tc_task_failure);
        Self {
            fcr: avg(|c| c.fcr),
            sr: avg(|c| c.sr),
            tc_early_stop,
            tc_task_failure,
            ratio: ratio_of(tc_task_failure, tc_early_stop),
            fass: avg(|c| c.fass),
            false_positives: cells.map(|c| c.false_positives).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub agent_id: String,
    pub datasets: BTreeMap<String, MetricCell>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroCell,
    pub micro: MetricCell,
}

/// Per-agent, per-dataset metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub datasets: Vec<String>,
    pub agents: Vec<AgentReport>,
}

fn col(dataset: &str) -> usize {
    dataset.len().max(8)
}

fn opt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), pct)
}

fn opt_num(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.decimals$}"))
}

impl MetricReport {
    pub fn from_records(records: &[EvaluationRecord]) -> Self {
        let datasets: BTreeSet<String> = records.iter().map(|r| r.dataset_id.clone()).collect();
        let mut by_agent: BTreeMap<&str, Vec<EvaluationRecord>> = BTreeMap::new();
        for r in records {
            by_agent.entry(r.agent_id.as_str()).or_default().push(r.clone());
        }
        let agents = by_agent
            .into_iter()
            .map(|(agent, recs)| {
                let mut per_ds: BTreeMap<String, Vec<EvaluationRecord>> = BTreeMap::new();
                for r in &recs {
                    per_ds.entry(r.dataset_id.clone()).or_default().push(r.clone());
                }
                let cells: BTreeMap<String, MetricCell> = per_ds
                    .into_iter()
                    .map(|(ds, rs)| (ds, MetricCell::from_records(&rs)))
                    .collect();
                AgentReport {
                    agent_id: agent.to_string(),
                    macro_avg: MacroCell::from_cells(cells.values()),
                    micro: MetricCell::from_records(&recs),
                    datasets: cells,
                }
            })
            .collect();
        Self {
            datasets: datasets.into_iter().collect(),
            agents,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Macro (SR, FCR) for every agent that has both.
    pub fn frontier_points(&self) -> Vec<FrontierPoint> {
        self.agents
            .iter()
            .filter_map(|a| Some(FrontierPoint::new(a.agent_id.clone(), a.macro_avg.sr?, a.macro_avg.fcr?)))
            .collect()
    }

    fn rate_table(&self, out: &mut String, title: &str, cell: fn(&MetricCell) -> Option<f64>, avg: fn(&MacroCell) -> Option<f64>) {
        let name_w = self.agents.iter().map(|a| a.agent_id.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(out, "{title}");
        let _ = write!(out, "{:<name_w$}", "Model");
        for ds in &self.datasets {
            let _ = write!(out, " | {ds:>w$}", w = col(ds));
        }
        let _ = writeln!(out, " | {:>8}", "Avg.");
        for a in &self.agents {
            let _ = write!(out, "{:<name_w$}", a.agent_id);
            for ds in &self.datasets {
                let v = a.datasets.get(ds).and_then(cell);
                let _ = write!(out, " | {:>w$}", opt_pct(v), w = col(ds));
            }
            let _ = writeln!(out, " | {:>8}", opt_pct(avg(&a.macro_avg)));
        }
        out.push('\n');
    }

    /// Plain-text tables in the layout of the printed results: FCR, SR,
    /// FASS, token costs, false positives, and the frontier.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        self.rate_table(&mut out, "False continue rate (%, lower is better)", |c| c.fcr, |m| m.fcr);
        self.rate_table(&mut out, "Success rate (%)", |c| c.sr, |m| m.sr);
        self.rate_table(&mut out, "FASS (%)", |c| c.fass, |m| m.fass);

        let name_w = self.agents.iter().map(|a| a.agent_id.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(out, "Token cost on infeasible tasks (mean tokens, macro)");
        let _ = writeln!(out, "{:<name_w$} | {:>12} | {:>12} | {:>7}", "Model", "early-stop", "task-failure", "ratio");
        for a in &self.agents {
            let m = &a.macro_avg;
            let _ = writeln!(
                out,
                "{:<name_w$} | {:>12} | {:>12} | {:>7}",
                a.agent_id,
                opt_num(m.tc_early_stop, 1),
                opt_num(m.tc_task_failure, 1),
                m.ratio.map_or_else(|| "-".to_string(), |r| format!("{r:.2}x")),
            );
        }
        out.push('\n');

        let _ = writeln!(out, "False positives (infeasible tasks completed)");
        let _ = write!(out, "{:<name_w$}", "Model");
        for ds in &self.datasets {
            let _ = write!(out, " | {ds:>w$}", w = col(ds));
        }
        let _ = writeln!(out, " | {:>8}", "Total");
        for a in &self.agents {
            let _ = write!(out, "{:<name_w$}", a.agent_id);
            for ds in &self.datasets {
                let v = a.datasets.get(ds).map_or(0, |c| c.false_positives);
                let _ = write!(out, " | {v:>w$}", w = col(ds));
            }
            let _ = writeln!(out, " | {:>8}", a.macro_avg.false_positives);
        }

        let frontier = pareto_frontier(&self.frontier_points());
        if !frontier.is_empty() {
            out.push('\n');
            let _ = writeln!(out, "SR x FCR Pareto frontier");
            for p in frontier {
                let _ = writeln!(out, "  {} (SR {}, FCR {})", p.agent_id, pct(p.sr), pct(p.fcr));
            }
        }
        out
    }
}

//! Scoring evaluation records and rendering the result tables.
//!
//! ```bash
//! cargo run --example metrics_report
//! ```

use toolstop::metrics::{pareto_frontier, pct, token_costs, EvaluationRecord, FrontierPoint, MetricReport};
use toolstop::Feasibility::{self, Feasible, Infeasible};

fn rec(agent: &str, ds: &str, i: usize, label: Feasibility, decision: Feasibility, success: bool, cost: u64) -> EvaluationRecord {
    EvaluationRecord {
        task_id: format!("{ds}-{i}"),
        dataset_id: ds.into(),
        agent_id: agent.into(),
        label,
        decision,
        success,
        token_cost: cost,
    }
}

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut records = Vec::new();
    for (i, ds) in ["bfcl", "tau-bench"].into_iter().enumerate() {
        for k in 0..10 {
            // "careful" stops on most infeasible tasks and solves most feasible ones.
            let stops = k < 8 - i * 2;
            records.push(rec("careful", ds, k, Infeasible, if stops { Infeasible } else { Feasible }, false, if stops { 900 } else { 4_200 }));
            records.push(rec("careful", ds, k + 10, Feasible, Feasible, k < 7, 2_000));
            // "eager" never stops, and once in a while bluffs a correct answer.
            records.push(rec("eager", ds, k, Infeasible, Feasible, k == 0, 5_100));
            records.push(rec("eager", ds, k + 10, Feasible, Feasible, k < 8, 2_400));
        }
    }

    let report = MetricReport::from_records(&records);
    print!("{}", report.render_text());

    let tc = token_costs(&records);
    println!(
        "\npooled: early-stop {:.0}, task-failure {:.0}, ratio {:.2}x, {} false positive(s) excluded",
        tc.tc_early_stop.unwrap_or_default(),
        tc.tc_task_failure.unwrap_or_default(),
        tc.ratio.unwrap_or_default(),
        tc.false_positives
    );

    // The frontier alone, from macro (SR, FCR) pairs.
    let points = [
        FrontierPoint::new("a", 0.591, 0.489),
        FrontierPoint::new("b", 0.580, 0.578),
        FrontierPoint::new("c", 0.511, 0.235),
    ];
    for p in pareto_frontier(&points) {
        println!("frontier: {} SR {} FCR {}", p.agent_id, pct(p.sr), pct(p.fcr));
    }
    Ok(())
}

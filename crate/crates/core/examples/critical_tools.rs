//! Mining critical tools from successful traces and masking them.
//!
//! ```bash
//! cargo run --example critical_tools
//! ```

use std::collections::BTreeMap;

use toolstop::agents::{run_single_agent, RefusalStyle, RunConfig, SimulatedEnvironment};
use toolstop::critical::{build_infeasible_suite, recovery_report, RetentionPolicy, RetentionRule};
use toolstop::pipeline::synthetic_roster;
use toolstop::task::{generate_synthetic_suite, SyntheticSuiteSpec};
use toolstop::trace::TraceRecorder;

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Six tasks, eight tools each: two planted critical tools, one
    // interchangeable pair and some filler.
    let suite = generate_synthetic_suite(&SyntheticSuiteSpec::new(6, 8, 2, 1, 42))?;
    let roster = synthetic_roster(3, 1, false, RefusalStyle::KeepTrying);
    let ids: Vec<String> = roster.iter().map(|a| a.agent_id.clone()).collect();

    let recorder = TraceRecorder::in_memory();
    let config = RunConfig::for_dataset("synthetic");
    let mut traces = BTreeMap::new();
    for task in &suite.tasks {
        let env = SimulatedEnvironment::for_task(task);
        for agent in &roster {
            let t = run_single_agent(agent, task, &config, &env, &recorder)?;
            let used: Vec<&str> = t.steps.iter().map(|s| s.tool_name.as_str()).collect();
            println!("{} {:<8} {:?} {:?}", task.task_id, agent.agent_id, t.outcome, used);
            traces.insert((task.task_id.clone(), agent.agent_id.clone()), t);
        }
    }

    let build = build_infeasible_suite(&suite.tasks, &traces, &ids, RetentionPolicy::default());
    println!();
    for v in &build.suite {
        println!(
            "{} masks {:?}; {} tools remain",
            v.task.task_id,
            v.masked_tools,
            v.remaining_pool().len()
        );
    }
    println!("\n{}", recovery_report(&build, &suite.tasks, &suite.planted));

    // Drop one agent's traces. All-succeeded now rejects every task;
    // any-2 still keeps them.
    traces.retain(|(_, agent), _| agent != "agent-2");
    let any_two = RetentionPolicy {
        rule: RetentionRule::AnyK(2),
        strict_identical: false,
    };
    let strict = build_infeasible_suite(&suite.tasks, &traces, &ids, RetentionPolicy::default());
    let loose = build_infeasible_suite(&suite.tasks, &traces, &ids, any_two);
    println!(
        "\nwithout agent-2's traces: all-succeeded keeps {} ({:?}), any-2 keeps {}",
        strict.suite.len(),
        strict.skip_counts(),
        loose.suite.len()
    );
    Ok(())
}

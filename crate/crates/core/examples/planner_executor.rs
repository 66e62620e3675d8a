//! The planner–executor protocol on an intact task and on its masked
//! variant.
//!
//! ```bash
//! cargo run --example planner_executor
//! ```

use toolstop::agents::{
    run_planner_executor, AgentSpec, RefusalStyle, RunConfig, ScriptSource, ScriptedPolicy, SimulatedEnvironment,
};
use toolstop::critical::{mask_tools, CriticalToolSet};
use toolstop::task::{generate_synthetic_suite, SyntheticSuiteSpec};
use toolstop::trace::{ExecutionTrace, TraceRecorder, Turn};

fn show(trace: &ExecutionTrace) {
    println!("{}  -> {:?}, decision {}", trace.trace_id, trace.outcome, trace.decision);
    for turn in trace.turns() {
        match turn {
            Turn::ToolCall(s) => println!("  {:>2} call     {} ({:?})", s.turn, s.tool_name, s.status),
            Turn::Message(m) => {
                let first = m.text.lines().next().unwrap_or_default();
                println!("  {:>2} {:<8} {first}", m.turn, m.role);
            }
        }
    }
}

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let suite = generate_synthetic_suite(&SyntheticSuiteSpec::new(1, 6, 2, 0, 3))?;
    let task = &suite.tasks[0];
    let script = ScriptSource::FromGroundTruth {
        agent_index: 0,
        roster_size: 1,
        extras: 0,
    };
    let planner = AgentSpec::scripted("planner", ScriptedPolicy::new(script.clone(), true, RefusalStyle::ExplicitStop));
    let executor = AgentSpec::scripted("executor", ScriptedPolicy::new(script, false, RefusalStyle::KeepTrying));
    let config = RunConfig::for_dataset(&task.dataset_id);
    let recorder = TraceRecorder::in_memory();

    let intact = run_planner_executor(&planner, &executor, task, &config, &SimulatedEnvironment::for_task(task), &recorder)?;
    show(&intact);

    let critical = CriticalToolSet {
        task_id: task.task_id.clone(),
        tools: suite.planted[&task.task_id].clone(),
        contributing_agents: vec![],
    };
    let variant = mask_tools(task, &critical)?;
    let env = SimulatedEnvironment::for_task(&variant.task);
    let masked = run_planner_executor(&planner, &executor, &variant.task, &config, &env, &recorder)?;
    println!();
    show(&masked);
    Ok(())
}

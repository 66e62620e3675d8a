//! Every example runs to completion.

#[path = "../examples/critical_tools.rs"]
mod critical_tools;
#[path = "../examples/load_adapters.rs"]
mod load_adapters;
#[path = "../examples/metrics_report.rs"]
mod metrics_report;
#[path = "../examples/planner_executor.rs"]
mod planner_executor;
#[path = "../examples/remote_agent.rs"]
mod remote_agent;
#[path = "../examples/stop_detection.rs"]
mod stop_detection;
#[path = "../examples/synthetic_pipeline.rs"]
mod synthetic_pipeline;
#[path = "../examples/trace_store.rs"]
mod trace_store;
#[path = "../examples/verification_stats.rs"]
mod verification_stats;

#[test]
fn critical_tools_example() {
    critical_tools::main().unwrap();
}

#[test]
fn load_adapters_example() {
    load_adapters::main().unwrap();
}

#[test]
fn metrics_report_example() {
    metrics_report::main().unwrap();
}

#[test]
fn planner_executor_example() {
    planner_executor::main().unwrap();
}

#[test]
fn remote_agent_example() {
    remote_agent::main().unwrap();
}

#[test]
fn stop_detection_example() {
    stop_detection::main().unwrap();
}

#[test]
fn synthetic_pipeline_example() {
    synthetic_pipeline::main().unwrap();
}

#[test]
fn trace_store_example() {
    trace_store::main().unwrap();
}

#[test]
fn verification_stats_example() {
    verification_stats::main().unwrap();
}

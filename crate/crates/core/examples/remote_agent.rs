//! A remote chat-completions agent. A canned in-process transport stands
//! in for the HTTP endpoint, so nothing leaves the machine; swap in
//! `ChatClient::http` for a real server. The key is read from
//! `TOOLSTOP_API_KEY` and never printed.
//!
//! ```bash
//! cargo run --example remote_agent
//! ```

use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

use toolstop::agents::{
    drive_single_agent, AgentSpec, ChatClient, ChatTransport, RemoteAgent, RemoteConfig, Role, RunConfig,
    SimulatedEnvironment, TransportError,
};
use toolstop::pipeline::PipelineConfig;
use toolstop::task::{ParamSpec, ParamType, Task, ToolSpec};
use toolstop::trace::TraceRecorder;

/// Replies with a tool call first, then a final answer.
struct Canned {
    calls: Mutex<usize>,
}

impl ChatTransport for Canned {
    fn post(&self, url: &str, _api_key: Option<&str>, body: &Value) -> Result<Value, TransportError> {
        let mut n = self.calls.lock().expect("lock");
        *n += 1;
        println!("POST {url} ({} messages, {} tools)", body["messages"].as_array().map_or(0, Vec::len), body["tools"].as_array().map_or(0, Vec::len));
        Ok(match *n {
            1 => json!({
                "choices": [{"message": {"tool_calls": [{"id": "c1", "type": "function",
                    "function": {"name": "get_weather", "arguments": "{\"city\":\"Oslo\"}"}}]}}],
                "usage": {"prompt_tokens": 120, "completion_tokens": 15}
            }),
            _ => json!({
                "choices": [{"message": {"content": "It is 4 degrees in Oslo."}}],
                "usage": {"prompt_tokens": 171, "completion_tokens": 9}
            }),
        })
    }
}

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let remote = RemoteConfig::new("http://localhost:8000/v1", "qwen3.5-27b");
    let config = PipelineConfig {
        agents: vec![AgentSpec::remote("qwen-27b", remote.clone())],
        ..PipelineConfig::default()
    };
    println!("roster entry:\n{}", config.to_toml());

    let client = ChatClient::with_transport(
        remote,
        Arc::new(Canned { calls: Mutex::new(0) }),
        Some("sk-example-not-real".into()),
    );
    println!("{client:?}\n");

    let task = Task {
        task_id: "weather-1".into(),
        dataset_id: "demo".into(),
        query: "What is the weather in Oslo?".into(),
        tool_pool: vec![ToolSpec::new("get_weather", "current weather for a city")
            .with_param("city", ParamSpec::new(ParamType::String, true))],
        ground_truth: None,
        metadata: Default::default(),
    };
    let mut agent = RemoteAgent::new(client, Role::Actor);
    let trace = drive_single_agent(
        &mut agent,
        "qwen-27b",
        &task,
        &RunConfig::default(),
        &SimulatedEnvironment::for_task(&task),
        &TraceRecorder::in_memory(),
    )?;
    for s in &trace.steps {
        println!("turn {} {} -> {} ({} in / {} out)", s.turn, s.tool_name, s.result, s.tokens_in, s.tokens_out);
    }
    println!("{:?}: {:?}", trace.outcome, trace.final_message().map(|m| m.text.as_str()));
    Ok(())
}

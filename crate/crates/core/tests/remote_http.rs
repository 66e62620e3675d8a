//! The remote agent against a local HTTP stub speaking the
//! chat-completions wire format.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

use toolstop::agents::{
    drive_single_agent, AgentError, ChatClient, ChatMessage, HttpTransport, RemoteAgent, RemoteConfig, Role,
    RunConfig, SimulatedEnvironment,
};
use toolstop::task::{ParamSpec, ParamType, Task, ToolSpec};
use toolstop::trace::{Outcome, TraceRecorder};
use toolstop::Feasibility;

#[derive(Debug, Clone)]
struct Seen {
    authorization: Option<String>,
    body: Value,
}

struct Stub {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
    handle: JoinHandle<()>,
}

/// Serves one scripted (status, body) per connection, then exits.
fn stub(replies: Vec<(u16, Value)>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let handle = std::thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    match k.to_ascii_lowercase().as_str() {
                        "content-length" => len = v.trim().parse().unwrap(),
                        "authorization" => authorization = Some(v.trim().to_string()),
                        _ => {}
                    }
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                authorization,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let payload = body.to_string();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            )
            .unwrap();
        }
    });
    Stub { url, seen, handle }
}

fn client(url: &str, key: Option<&str>, retries: u32) -> ChatClient {
    let mut config = RemoteConfig::new(url, "stub-model");
    config.max_retries = retries;
    config.initial_backoff_ms = 1;
    let transport = Arc::new(HttpTransport::new(Duration::from_secs(5)).unwrap());
    ChatClient::with_transport(config, transport, key.map(str::to_string)).with_sleeper(|_| {})
}

fn task() -> Task {
    Task {
        task_id: "t1".into(),
        dataset_id: "demo".into(),
        query: "What is the weather in Oslo?".into(),
        tool_pool: vec![ToolSpec::new("get_weather", "current weather")
            .with_param("city", ParamSpec::new(ParamType::String, true))],
        ground_truth: None,
        metadata: Default::default(),
    }
}

fn tool_call(name: &str, args: &str) -> Value {
    json!({
        "choices": [{"message": {"role": "assistant", "content": null, "tool_calls": [
            {"id": "call_1", "type": "function", "function": {"name": name, "arguments": args}}
        ]}}],
        "usage": {"prompt_tokens": 120, "completion_tokens": 15}
    })
}

fn answer(text: &str) -> Value {
    json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 300, "completion_tokens": 7}
    })
}

#[test]
fn full_run_passes_usage_and_tools_through() {
    let s = stub(vec![(200, tool_call("get_weather", r#"{"city":"Oslo"}"#)), (200, answer("It is 4 degrees in Oslo."))]);
    let mut agent = RemoteAgent::new(client(&s.url, Some("sk-local"), 0), Role::Actor);
    let t = task();
    let recorder = TraceRecorder::in_memory();
    let trace = drive_single_agent(
        &mut agent,
        "stub",
        &t,
        &RunConfig::default(),
        &SimulatedEnvironment::for_task(&t),
        &recorder,
    )
    .unwrap();
    s.handle.join().unwrap();

    assert_eq!(trace.outcome, Outcome::Success);
    assert_eq!((trace.steps[0].tokens_in, trace.steps[0].tokens_out), (120, 15));
    assert_eq!(trace.messages.last().unwrap().tokens_in, 300);

    let seen = s.seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer sk-local"));
    let first = &seen[0].body;
    assert_eq!(first["model"], "stub-model");
    assert_eq!(first["tools"][0]["function"]["name"], "get_weather");
    assert_eq!(first["tools"][0]["function"]["parameters"]["required"], json!(["city"]));
    assert_eq!(first["messages"][0]["role"], "system");
    let second = seen[1].body["messages"].as_array().unwrap();
    assert_eq!(second[2]["tool_calls"][0]["function"]["name"], "get_weather");
    assert_eq!(second[3]["role"], "tool");
    assert_eq!(second[3]["tool_call_id"], "call_1");
}

#[test]
fn stop_from_the_model_ends_the_run() {
    let s = stub(vec![(200, answer("STOP: no tool can book flights"))]);
    let mut agent = RemoteAgent::new(client(&s.url, None, 0), Role::Actor);
    let t = task();
    let trace = drive_single_agent(
        &mut agent,
        "stub",
        &t,
        &RunConfig::default(),
        &SimulatedEnvironment::for_task(&t),
        &TraceRecorder::in_memory(),
    )
    .unwrap();
    s.handle.join().unwrap();
    assert_eq!(trace.outcome, Outcome::Stopped);
    assert_eq!(trace.decision, Feasibility::Infeasible);
    assert_eq!(trace.stop_reason.as_deref(), Some("no tool can book flights"));
    assert_eq!(s.seen.lock().unwrap()[0].authorization, None);
}

#[test]
fn transient_statuses_are_retried() {
    let s = stub(vec![
        (503, json!({"error": "busy"})),
        (429, json!({"error": "slow down"})),
        (200, answer("done")),
    ]);
    let reply = client(&s.url, None, 3)
        .complete_turn(&[ChatMessage::User("hi".into())], &[])
        .unwrap();
    s.handle.join().unwrap();
    assert_eq!((reply.usage.tokens_in, reply.usage.tokens_out), (300, 7));
    assert_eq!(s.seen.lock().unwrap().len(), 3);
}

#[test]
fn retry_budget_is_bounded() {
    let s = stub(vec![(500, json!({})), (502, json!({}))]);
    let err = client(&s.url, None, 1)
        .complete_turn(&[ChatMessage::User("hi".into())], &[])
        .unwrap_err();
    s.handle.join().unwrap();
    assert!(matches!(err, AgentError::Transport { attempts: 2, .. }), "{err:?}");
}

#[test]
fn auth_failure_is_not_retried_and_ends_the_trace() {
    let s = stub(vec![(401, json!({"error": "bad key"}))]);
    let mut agent = RemoteAgent::new(client(&s.url, Some("sk-wrong"), 5), Role::Actor);
    let t = task();
    let trace = drive_single_agent(
        &mut agent,
        "stub",
        &t,
        &RunConfig::default(),
        &SimulatedEnvironment::for_task(&t),
        &TraceRecorder::in_memory(),
    )
    .unwrap();
    s.handle.join().unwrap();
    assert_eq!(s.seen.lock().unwrap().len(), 1);
    assert_eq!(trace.outcome, Outcome::Failure);
    assert!(trace.error.as_deref().unwrap().contains("authentication"));
}

#[test]
fn api_key_never_shows_in_debug_output() {
    let c = client("http://127.0.0.1:9/v1", Some("sk-very-secret"), 0);
    let shown = format!("{c:?}");
    assert!(!shown.contains("sk-very-secret"));
    assert!(shown.contains("<redacted>"));
}

//! Chat-completions client with tool schemas, usage pass-through and
//! bounded exponential-backoff retries.

use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Map, Value};

use super::{
    render_conversation, Action, AgentDriver, AgentError, ChatMessage, RemoteConfig, Reply, Role,
    ToolCall, Usage,
};
use crate::estimate_tokens;
use crate::task::{ParamType, ToolSpec};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    /// Worth retrying: connection failures, timeouts, 429, 5xx.
    #[error("transient: {0}")]
    Transient(String),
    #[error("unauthorized: {0}")]
    Auth(String),
    #[error("{0}")]
    Fatal(String),
}

/// Posts one JSON body and returns the decoded JSON response.
pub trait ChatTransport: Send + Sync {
    fn post(&self, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value, TransportError>;
}

#[derive(Debug, Clone)]
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, AgentError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| AgentError::Config(e.to_string()))?;
        Ok(Self { client })
    }
}

impl ChatTransport for HttpTransport {
    fn post(&self, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value, TransportError> {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| TransportError::Transient(e.to_string()))?;
        match status.as_u16() {
            200..=299 => serde_json::from_str(&text).map_err(|e| TransportError::Fatal(format!("invalid JSON: {e}"))),
            401 | 403 => Err(TransportError::Auth(format!("{status}: {text}"))),
            408 | 429 | 500..=599 => Err(TransportError::Transient(format!("{status}: {text}"))),
            _ => Err(TransportError::Fatal(format!("{status}: {text}"))),
        }
    }
}

/// JSON-schema form of a tool for the `tools` request field.
pub fn tool_schema(tool: &ToolSpec) -> Value {
    let mut props = Map::new();
    let mut required = Vec::new();
    for (name, p) in &tool.parameters {
        let mut schema = match p.kind {
            ParamType::String => json!({"type": "string"}),
            ParamType::Number => json!({"type": "number"}),
            ParamType::Boolean => json!({"type": "boolean"}),
            ParamType::Enum => json!({"type": "string", "enum": p.allowed}),
            ParamType::Object => json!({"type": "object"}),
            ParamType::Array => json!({"type": "array"}),
        };
        if !p.description.is_empty() {
            schema["description"] = json!(p.description);
        }
        props.insert(name.clone(), schema);
        if p.required {
            required.push(name.clone());
        }
    }
    json!({
        "type": "function",
        "function": {
            "name": tool.name,
            "description": tool.description,
            "parameters": {"type": "object", "properties": props, "required": required},
        }
    })
}

fn wire_messages(conversation: &[ChatMessage]) -> Vec<Value> {
    let mut out: Vec<Value> = Vec::with_capacity(conversation.len());
    for m in conversation {
        match m {
            ChatMessage::System(t) => out.push(json!({"role": "system", "content": t})),
            ChatMessage::User(t) => out.push(json!({"role": "user", "content": t})),
            ChatMessage::Assistant(t) => out.push(json!({"role": "assistant", "content": t})),
            ChatMessage::ToolCall { id, name, arguments } => {
                let call = json!({
                    "id": id,
                    "type": "function",
                    "function": {"name": name, "arguments": arguments},
                });
                // consecutive calls came from one assistant message
                match out.last_mut() {
                    Some(prev) if prev.get("tool_calls").is_some() => {
                        prev["tool_calls"].as_array_mut().expect("array").push(call);
                    }
                    _ => out.push(json!({"role": "assistant", "content": null, "tool_calls": [call]})),
                }
            }
            ChatMessage::ToolResult { id, content, .. } => {
                out.push(json!({"role": "tool", "tool_call_id": id, "content": content}))
            }
        }
    }
    out
}

#[derive(Clone)]
pub struct ChatClient {
    config: RemoteConfig,
    transport: Arc<dyn ChatTransport>,
    api_key: Option<String>,
    sleep: fn(Duration),
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatClient")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl ChatClient {
    /// HTTP client reading the API key from `config.api_key_env`, if set.
    pub fn http(config: RemoteConfig) -> Result<Self, AgentError> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(Self::with_transport(config, Arc::new(HttpTransport::new(Duration::from_secs(300))?), api_key))
    }

    pub fn with_transport(config: RemoteConfig, transport: Arc<dyn ChatTransport>, api_key: Option<String>) -> Self {
        Self {
            config,
            transport,
            api_key,
            sleep: std::thread::sleep,
        }
    }

    /// Replaces the backoff sleeper (tests use a no-op).
    pub fn with_sleeper(mut self, sleep: fn(Duration)) -> Self {
        self.sleep = sleep;
        self
    }

    pub fn url(&self) -> String {
        let base = self.config.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    pub fn request_body(&self, conversation: &[ChatMessage], tools: &[ToolSpec]) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": wire_messages(conversation),
            "temperature": self.config.temperature,
        });
        if let Some(max) = self.config.max_tokens {
            body["max_tokens"] = json!(max);
        }
        if !tools.is_empty() {
            body["tools"] = Value::Array(tools.iter().map(tool_schema).collect());
        }
        body
    }

    /// One assistant turn plus its token usage.
    pub fn complete_turn(&self, conversation: &[ChatMessage], tools: &[ToolSpec]) -> Result<Reply, AgentError> {
        let body = self.request_body(conversation, tools);
        let url = self.url();
        let mut attempt = 0u32;
        let response = loop {
            attempt += 1;
            match self.transport.post(&url, self.api_key.as_deref(), &body) {
                Ok(v) => break v,
                Err(TransportError::Auth(m)) => return Err(AgentError::Auth(m)),
                Err(TransportError::Fatal(m)) => {
                    return Err(AgentError::Transport {
                        attempts: attempt,
                        message: m,
                    })
                }
                Err(TransportError::Transient(m)) => {
                    if attempt > self.config.max_retries {
                        return Err(AgentError::Transport {
                            attempts: attempt,
                            message: m,
                        });
                    }
                    let delay = self.config.initial_backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                    log::debug!("transient error from {url} (attempt {attempt}): {m}; retrying in {delay} ms");
                    (self.sleep)(Duration::from_millis(delay));
                }
            }
        };
        parse_response(&response, conversation, tools)
    }
}

fn parse_response(v: &Value, conversation: &[ChatMessage], tools: &[ToolSpec]) -> Result<Reply, AgentError> {
    let message = v
        .pointer("/choices/0/message")
        .ok_or_else(|| AgentError::Malformed("response has no choices[0].message".into()))?;
    let calls: Vec<ToolCall> = message
        .get("tool_calls")
        .and_then(Value::as_array)
        .map(|calls| {
            calls
                .iter()
                .enumerate()
                .map(|(i, c)| ToolCall {
                    id: c
                        .get("id")
                        .and_then(Value::as_str)
                        .map_or_else(|| format!("call_{i}"), str::to_string),
                    name: c
                        .pointer("/function/name")
                        .and_then(Value::as_str)
                        .unwrap_or_default()
                        .to_string(),
                    arguments: match c.pointer("/function/arguments") {
                        Some(Value::String(s)) => s.clone(),
                        Some(other) => other.to_string(),
                        None => String::new(),
                    },
                })
                .collect()
        })
        .unwrap_or_default();
    let action = if calls.is_empty() {
        Action::Message(
            message
                .get("content")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string(),
        )
    } else {
        Action::ToolCalls(calls)
    };

    let reported = (
        v.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        v.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    );
    let usage = match reported {
        (Some(tokens_in), Some(tokens_out)) => Usage {
            tokens_in,
            tokens_out,
            estimated: false,
        },
        _ => {
            log::warn!("response carries no usage; falling back to the whitespace estimator");
            let out = match &action {
                Action::Message(t) => t.clone(),
                Action::ToolCalls(c) => c.iter().map(|c| format!("{} {}", c.name, c.arguments)).collect::<Vec<_>>().join("\n"),
            };
            Usage {
                tokens_in: estimate_tokens(&render_conversation(conversation)) + estimate_tokens(&super::render_tools(tools)),
                tokens_out: estimate_tokens(&out),
                estimated: true,
            }
        }
    };
    Ok(Reply { action, usage })
}

/// A remote model acting as single agent, executor or planner. Planners are
/// never offered tool schemas; they see the listing as text.
#[derive(Debug, Clone)]
pub struct RemoteAgent {
    client: ChatClient,
    role: Role,
}

impl RemoteAgent {
    pub fn new(client: ChatClient, role: Role) -> Self {
        Self { client, role }
    }
}

impl AgentDriver for RemoteAgent {
    fn respond(&mut self, conversation: &[ChatMessage], tools: &[ToolSpec]) -> Result<Reply, AgentError> {
        match self.role {
            Role::Actor => self.client.complete_turn(conversation, tools),
            Role::Planner => self.client.complete_turn(conversation, &[]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Scripted {
        replies: Mutex<Vec<Result<Value, TransportError>>>,
        bodies: Mutex<Vec<Value>>,
    }

    impl Scripted {
        fn new(mut replies: Vec<Result<Value, TransportError>>) -> Arc<Self> {
            replies.reverse();
            Arc::new(Self {
                replies: Mutex::new(replies),
                bodies: Mutex::new(Vec::new()),
            })
        }
    }

    impl ChatTransport for Scripted {
        fn post(&self, _url: &str, _key: Option<&str>, body: &Value) -> Result<Value, TransportError> {
            self.bodies.lock().unwrap().push(body.clone());
            self.replies
                .lock()
                .unwrap()
                .pop()
                .unwrap_or(Err(TransportError::Fatal("exhausted".into())))
        }
    }

    fn client(t: Arc<Scripted>) -> ChatClient {
        ChatClient::with_transport(RemoteConfig::new("http://stub/v1", "m"), t, None).with_sleeper(|_| {})
    }

    fn tool_call_response() -> Value {
        json!({
            "choices": [{"message": {"role": "assistant", "content": null, "tool_calls": [
                {"id": "c1", "type": "function", "function": {"name": "search", "arguments": "{\"q\":\"x\"}"}}
            ]}}],
            "usage": {"prompt_tokens": 120, "completion_tokens": 15}
        })
    }

    #[test]
    fn usage_is_passed_through() {
        let t = Scripted::new(vec![Ok(tool_call_response())]);
        let reply = client(t.clone()).complete_turn(&[ChatMessage::User("hi".into())], &[]).unwrap();
        assert_eq!(
            reply.usage,
            Usage {
                tokens_in: 120,
                tokens_out: 15,
                estimated: false
            }
        );
        assert!(matches!(reply.action, Action::ToolCalls(ref c) if c[0].name == "search"));
        let body = &t.bodies.lock().unwrap()[0];
        assert_eq!(body["temperature"], json!(0.0));
        assert!(body.get("tools").is_none());
    }

    #[test]
    fn two_transient_failures_then_success() {
        let t = Scripted::new(vec![
            Err(TransportError::Transient("503".into())),
            Err(TransportError::Transient("timeout".into())),
            Ok(tool_call_response()),
        ]);
        client(t.clone()).complete_turn(&[], &[]).unwrap();
        assert_eq!(t.bodies.lock().unwrap().len(), 3);
    }

    #[test]
    fn retry_budget_exhausted() {
        let t = Scripted::new((0..10).map(|_| Err(TransportError::Transient("503".into()))).collect());
        let err = client(t.clone()).complete_turn(&[], &[]).unwrap_err();
        assert!(matches!(err, AgentError::Transport { attempts: 4, .. }));
        assert_eq!(t.bodies.lock().unwrap().len(), 4);
    }

    #[test]
    fn auth_is_not_retried() {
        let t = Scripted::new(vec![Err(TransportError::Auth("401".into())), Ok(tool_call_response())]);
        assert!(matches!(client(t.clone()).complete_turn(&[], &[]), Err(AgentError::Auth(_))));
        assert_eq!(t.bodies.lock().unwrap().len(), 1);
    }

    #[test]
    fn missing_usage_falls_back_to_estimator() {
        let t = Scripted::new(vec![Ok(json!({"choices": [{"message": {"content": "three word answer"}}]}))]);
        let reply = client(t).complete_turn(&[ChatMessage::User("a b".into())], &[]).unwrap();
        assert!(reply.usage.estimated);
        assert_eq!(reply.usage.tokens_out, 3);
        assert_eq!(reply.usage.tokens_in, 3);
    }

    #[test]
    fn tool_calls_are_grouped_on_the_wire() {
        let conv = vec![
            ChatMessage::ToolCall { id: "1".into(), name: "a".into(), arguments: "{}".into() },
            ChatMessage::ToolCall { id: "2".into(), name: "b".into(), arguments: "{}".into() },
            ChatMessage::ToolResult { id: "1".into(), name: "a".into(), content: "ok".into(), status: crate::trace::ToolStatus::Ok },
        ];
        let wire = wire_messages(&conv);
        assert_eq!(wire.len(), 2);
        assert_eq!(wire[0]["tool_calls"].as_array().unwrap().len(), 2);
        assert_eq!(wire[1]["role"], "tool");
    }

    #[test]
    fn schema_shape() {
        use crate::task::ParamSpec;
        let tool = ToolSpec::new("pay", "pay an invoice").with_param("amount", ParamSpec::new(ParamType::Number, true));
        let s = tool_schema(&tool);
        assert_eq!(s["function"]["parameters"]["required"], json!(["amount"]));
        assert_eq!(s["function"]["parameters"]["properties"]["amount"]["type"], "number");
    }

    #[test]
    fn url_normalization() {
        let c = client(Scripted::new(vec![]));
        assert_eq!(c.url(), "http://stub/v1/chat/completions");
    }
}

//! Agent execution: scripted and remote agents, the single-agent loop, the
//! planner–executor protocol, and `STOP` detection.

mod environment;
mod remote;
mod runner;
mod scripted;
mod stop;

use serde::{Deserialize, Serialize};

use crate::task::{Task, ToolSpec};
use crate::trace::{ToolStatus, TraceError};

pub use environment::{
    Environment, GroundTruthOracle, SimulatedEnvironment, SuccessOracle, ToolResponse,
};
pub use remote::{
    tool_schema, ChatClient, ChatTransport, HttpTransport, RemoteAgent, TransportError,
};
pub use runner::{
    drive_planner_executor, drive_single_agent, run_planner_executor, run_single_agent, trace_id,
    ExecutorReport, Plan,
};
pub use scripted::{placeholder_arguments, ScriptedAgent};
pub use stop::{default_stop_patterns, detect_stop, StopPattern, StopSignal, PRIMARY_PATTERN_ID};

/// System message every agent receives before the task.
pub const FEASIBILITY_PROMPT: &str = "\
You are a helpful assistant that solves user tasks by calling the provided tools. Think step by step.

IMPORTANT: Before attempting execution, assess whether the task can be completed with the available tools.
- If the task IS feasible: proceed and call the necessary tools.
- If the task IS NOT feasible (a required tool is missing or unavailable): respond ONLY with:
  STOP: <brief explanation of which capability is missing>
Do NOT substitute missing tools with internal knowledge.
Do NOT attempt workarounds using unrelated tools.

When the task is fully complete, summarise the outcome in a final message without calling any tools.";

/// Instructions for the planner role of the planner–executor protocol.
pub const PLANNER_PROMPT: &str = "\
You are the planner of a two-agent system. You do not call tools yourself.
Read the user task and the list of available tools. If a capability the task needs is missing, respond ONLY with:
  STOP: <brief explanation of which capability is missing>
Otherwise respond with a JSON plan: {\"required_capabilities\": [tool names], \"steps\": [short step descriptions]}.
When shown an executor report, either reply with STOP or with a revised JSON plan.";

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("agent configuration: {0}")]
    Config(String),
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// Datasets with known per-task turn caps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Benchmark {
    Bfcl,
    StableToolBench,
    ApiBank,
    TauBench,
}

impl Benchmark {
    pub fn from_dataset_id(id: &str) -> Option<Self> {
        let id = id.to_ascii_lowercase();
        Some(match id.as_str() {
            "bfcl" => Benchmark::Bfcl,
            "stabletoolbench" | "stb" => Benchmark::StableToolBench,
            "api-bank" | "apibank" => Benchmark::ApiBank,
            "tau-bench" | "taubench" | "tau" => Benchmark::TauBench,
            _ => return None,
        })
    }

    pub fn max_turns(self) -> u32 {
        match self {
            Benchmark::Bfcl | Benchmark::StableToolBench => 10,
            Benchmark::ApiBank => 12,
            Benchmark::TauBench => 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub max_turns: u32,
    pub feasibility_prompt: String,
    pub stop_patterns: Vec<StopPattern>,
    pub planner_rounds: u32,
    pub max_executor_turns: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_turns: 10,
            feasibility_prompt: FEASIBILITY_PROMPT.to_string(),
            stop_patterns: default_stop_patterns(),
            planner_rounds: 2,
            max_executor_turns: 8,
        }
    }
}

impl RunConfig {
    /// Defaults with the turn cap of the named dataset (10 when unknown).
    pub fn for_dataset(dataset_id: &str) -> Self {
        Self {
            max_turns: Benchmark::from_dataset_id(dataset_id).map_or(10, Benchmark::max_turns),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_turns == 0 || self.planner_rounds == 0 || self.max_executor_turns == 0 {
            return Err(AgentError::Config("turn budgets must be positive".into()));
        }
        if self.stop_patterns.is_empty() {
            return Err(AgentError::Config("stop_patterns must not be empty".into()));
        }
        Ok(())
    }
}

/// How a scripted agent reacts once it knows a tool it needs is missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefusalStyle {
    /// Emits the `STOP:` line.
    ExplicitStop,
    /// Declines in prose ("I don't have a tool to ...").
    SoftRefusal,
    /// Never declines; retries and eventually answers anyway.
    KeepTrying,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptSource {
    /// The same tool sequence for every task.
    Fixed(Vec<String>),
    /// Derived from the task's planted solution path: one member of every
    /// required capability group, plus up to `extras` optional tools from
    /// the groups assigned to this agent (`index % roster_size`).
    FromGroundTruth {
        agent_index: usize,
        roster_size: usize,
        #[serde(default)]
        extras: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    pub script: ScriptSource,
    /// Checks the pool against its script before acting.
    pub stop_aware: bool,
    pub refusal_style: RefusalStyle,
    /// Retries of a missing tool under [`RefusalStyle::KeepTrying`].
    #[serde(default = "default_retries")]
    pub retries_per_missing: u32,
}

fn default_retries() -> u32 {
    2
}

impl ScriptedPolicy {
    pub fn new(script: ScriptSource, stop_aware: bool, refusal_style: RefusalStyle) -> Self {
        Self {
            script,
            stop_aware,
            refusal_style,
            retries_per_missing: default_retries(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL of a chat-completions endpoint, e.g. `http://host:8000/v1`.
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    /// Environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub initial_backoff_ms: u64,
}

pub const DEFAULT_API_KEY_ENV: &str = "TOOLSTOP_API_KEY";

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

fn default_max_retries() -> u32 {
    3
}

fn default_backoff() -> u64 {
    500
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: 0.0,
            max_tokens: None,
            api_key_env: default_key_env(),
            max_retries: default_max_retries(),
            initial_backoff_ms: default_backoff(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentKind {
    Scripted(ScriptedPolicy),
    Remote(RemoteConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub agent_id: String,
    #[serde(flatten)]
    pub kind: AgentKind,
}

fn valid_tool_identifier(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '/'))
}

impl AgentSpec {
    pub fn scripted(agent_id: impl Into<String>, policy: ScriptedPolicy) -> Self {
        Self {
            agent_id: agent_id.into(),
            kind: AgentKind::Scripted(policy),
        }
    }

    pub fn remote(agent_id: impl Into<String>, config: RemoteConfig) -> Self {
        Self {
            agent_id: agent_id.into(),
            kind: AgentKind::Remote(config),
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.agent_id.trim().is_empty() {
            return Err(AgentError::Config("empty agent id".into()));
        }
        match &self.kind {
            AgentKind::Scripted(p) => {
                if let ScriptSource::Fixed(names) = &p.script {
                    if let Some(bad) = names.iter().find(|n| !valid_tool_identifier(n)) {
                        return Err(AgentError::Config(format!(
                            "{}: `{bad}` is not a valid tool identifier",
                            self.agent_id
                        )));
                    }
                }
                if let ScriptSource::FromGroundTruth { agent_index, roster_size, .. } = p.script {
                    if roster_size == 0 || agent_index >= roster_size {
                        return Err(AgentError::Config(format!(
                            "{}: agent_index must be < roster_size",
                            self.agent_id
                        )));
                    }
                }
            }
            AgentKind::Remote(r) => {
                if r.temperature.is_nan() || r.temperature < 0.0 {
                    return Err(AgentError::Config(format!(
                        "{}: temperature must be >= 0",
                        self.agent_id
                    )));
                }
                if r.endpoint.is_empty() || r.model.is_empty() {
                    return Err(AgentError::Config(format!(
                        "{}: endpoint and model are required",
                        self.agent_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Builds a fresh driver for one task in the given role.
    pub fn driver(&self, task: &Task, role: Role) -> Result<Box<dyn AgentDriver>, AgentError> {
        self.validate()?;
        Ok(match &self.kind {
            AgentKind::Scripted(p) => Box::new(ScriptedAgent::new(p.clone(), task, role)),
            AgentKind::Remote(r) => Box::new(RemoteAgent::new(ChatClient::http(r.clone())?, role)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Acts directly on the tools (single agent or executor).
    Actor,
    /// Reads the tool listing and emits plans or `STOP`.
    Planner,
}

/// Provider-neutral conversation entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChatMessage {
    System(String),
    User(String),
    Assistant(String),
    ToolCall {
        id: String,
        name: String,
        arguments: String,
    },
    ToolResult {
        id: String,
        name: String,
        content: String,
        status: ToolStatus,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    /// Raw argument payload as produced by the agent; may be malformed.
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Message(String),
    ToolCalls(Vec<ToolCall>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Usage {
    pub tokens_in: u64,
    pub tokens_out: u64,
    /// True when counted by the whitespace estimator instead of reported.
    pub estimated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub action: Action,
    pub usage: Usage,
}

/// One assistant turn at a time, given the conversation so far and the
/// tools currently offered.
pub trait AgentDriver: Send {
    fn respond(&mut self, conversation: &[ChatMessage], tools: &[ToolSpec]) -> Result<Reply, AgentError>;
}

/// Text rendering used for token estimation and for planner tool listings.
pub fn render_tools(tools: &[ToolSpec]) -> String {
    tools
        .iter()
        .map(|t| {
            let params: Vec<String> = t
                .parameters
                .iter()
                .map(|(n, p)| format!("{n}{}", if p.required { "" } else { "?" }))
                .collect();
            format!("- {}({}): {}", t.name, params.join(", "), t.description)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_conversation(conversation: &[ChatMessage]) -> String {
    conversation
        .iter()
        .map(|m| match m {
            ChatMessage::System(t) => format!("system: {t}"),
            ChatMessage::User(t) => format!("user: {t}"),
            ChatMessage::Assistant(t) => format!("assistant: {t}"),
            ChatMessage::ToolCall { name, arguments, .. } => format!("call: {name} {arguments}"),
            ChatMessage::ToolResult { name, content, .. } => format!("result: {name} {content}"),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_turn_caps() {
        assert_eq!(RunConfig::for_dataset("bfcl").max_turns, 10);
        assert_eq!(RunConfig::for_dataset("stabletoolbench").max_turns, 10);
        assert_eq!(RunConfig::for_dataset("api-bank").max_turns, 12);
        assert_eq!(RunConfig::for_dataset("tau-bench").max_turns, 15);
        let d = RunConfig::default();
        assert_eq!((d.planner_rounds, d.max_executor_turns), (2, 8));
        assert!(d.feasibility_prompt.contains("STOP: <brief explanation"));
    }

    #[test]
    fn remote_defaults_are_deterministic_decoding() {
        let r = RemoteConfig::new("http://localhost:8000/v1", "m");
        assert_eq!(r.temperature, 0.0);
        let bad = AgentSpec::remote("x", RemoteConfig { temperature: -0.1, ..r });
        assert!(bad.validate().is_err());
    }

    #[test]
    fn scripted_policy_rejects_bad_identifiers() {
        let spec = AgentSpec::scripted(
            "s",
            ScriptedPolicy::new(
                ScriptSource::Fixed(vec!["ok_tool".into(), "bad tool".into()]),
                false,
                RefusalStyle::KeepTrying,
            ),
        );
        assert!(spec.validate().is_err());
    }

    #[test]
    fn agent_spec_config_shape() {
        let text = r#"{"agent_id":"a","kind":"scripted","script":{"fixed":["x"]},
            "stop_aware":true,"refusal_style":"explicit_stop"}"#;
        let spec: AgentSpec = serde_json::from_str(text).unwrap();
        assert!(matches!(spec.kind, AgentKind::Scripted(ref p) if p.retries_per_missing == 2));
    }
}

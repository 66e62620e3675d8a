use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    detect_stop, render_tools, Action, AgentDriver, AgentError, AgentSpec, ChatMessage,
    Environment, Role, RunConfig, RunError, StopSignal, ToolResponse, PLANNER_PROMPT,
};
use crate::task::Task;
use crate::trace::{
    ExecutionTrace, MessageTurn, Outcome, ToolCallStep, ToolStatus, TraceRecorder, Turn,
};
use crate::Feasibility;

pub(crate) const REPORT_PREFIX: &str = "Executor report:";

pub fn trace_id(task_id: &str, agent_id: &str) -> String {
    format!("{task_id}::{agent_id}")
}

/// Structured plan block exchanged between planner and executor.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub required_capabilities: Vec<String>,
    pub steps: Vec<String>,
}

impl Plan {
    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    /// Extracts the first `{...}` block that decodes as a plan.
    pub fn parse(text: &str) -> Option<Self> {
        let start = text.find('{')?;
        let end = text.rfind('}')?;
        (start < end)
            .then(|| serde_json::from_str(&text[start..=end]).ok())
            .flatten()
    }
}

/// What the planner sees about an executor pass before its review round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutorReport {
    pub round: u32,
    pub outcome: Outcome,
    pub missing_tools: Vec<String>,
    pub tool_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_message: Option<String>,
}

enum LoopEnd {
    Stopped(StopSignal),
    Answer { success: bool, text: String },
    Cap,
    Error(String),
}

struct Session<'a> {
    recorder: &'a TraceRecorder,
    trace_id: String,
    turn: u32,
    steps: Vec<ToolCallStep>,
}

impl<'a> Session<'a> {
    fn open(recorder: &'a TraceRecorder, task: &Task, agent_id: &str) -> Result<Self, RunError> {
        let id = trace_id(&task.task_id, agent_id);
        recorder.open(&id, &task.task_id, agent_id)?;
        Ok(Self {
            recorder,
            trace_id: id,
            turn: 0,
            steps: Vec::new(),
        })
    }

    fn message(&mut self, role: &str, text: &str, tokens_in: u64, tokens_out: u64) -> Result<(), RunError> {
        self.turn += 1;
        self.recorder.append(
            &self.trace_id,
            Turn::Message(MessageTurn {
                turn: self.turn,
                role: role.to_string(),
                text: text.to_string(),
                tokens_in,
                tokens_out,
            }),
        )?;
        Ok(())
    }

    fn step(&mut self, mut step: ToolCallStep) -> Result<(), RunError> {
        self.turn += 1;
        step.turn = self.turn;
        self.recorder.append(&self.trace_id, Turn::ToolCall(step.clone()))?;
        self.steps.push(step);
        Ok(())
    }

    fn finish(self, end: LoopEnd) -> Result<ExecutionTrace, RunError> {
        let (outcome, decision, reason, error) = match end {
            LoopEnd::Stopped(s) => (Outcome::Stopped, Feasibility::Infeasible, Some(s.reason), None),
            LoopEnd::Answer { success: true, .. } => (Outcome::Success, Feasibility::Feasible, None, None),
            LoopEnd::Answer { success: false, .. } => (Outcome::Failure, Feasibility::Feasible, None, None),
            LoopEnd::Cap => (Outcome::TurnCapExceeded, Feasibility::Feasible, None, None),
            LoopEnd::Error(e) => (Outcome::Failure, Feasibility::Feasible, None, Some(e)),
        };
        Ok(self.recorder.finalize(&self.trace_id, outcome, decision, reason, error)?)
    }
}

fn recoverable(e: AgentError) -> Result<LoopEnd, RunError> {
    match e {
        AgentError::Config(_) => Err(e.into()),
        other => Ok(LoopEnd::Error(other.to_string())),
    }
}

/// Drives one agent over tools until it answers, declares `STOP`, errors
/// out, or spends `budget` turns. Every assistant turn counts, and each
/// tool call in a parallel batch is its own turn.
#[allow(clippy::too_many_arguments)]
fn act_loop(
    session: &mut Session<'_>,
    driver: &mut dyn AgentDriver,
    mut conversation: Vec<ChatMessage>,
    budget: u32,
    role: &str,
    task: &Task,
    config: &RunConfig,
    env: &dyn Environment,
) -> Result<LoopEnd, RunError> {
    let mut used = 0u32;
    loop {
        if used >= budget {
            return Ok(LoopEnd::Cap);
        }
        let reply = match driver.respond(&conversation, env.tools()) {
            Ok(r) => r,
            Err(e) => return recoverable(e),
        };
        match reply.action {
            Action::Message(text) => {
                session.message(role, &text, reply.usage.tokens_in, reply.usage.tokens_out)?;
                if let Some(sig) = detect_stop(&text, &config.stop_patterns) {
                    return Ok(LoopEnd::Stopped(sig));
                }
                let success = env.judge(task, &session.steps, &text);
                return Ok(LoopEnd::Answer { success, text });
            }
            Action::ToolCalls(calls) => {
                let mut results = Vec::with_capacity(calls.len());
                for (i, call) in calls.iter().enumerate() {
                    if used >= budget {
                        return Ok(LoopEnd::Cap);
                    }
                    used += 1;
                    let parsed: Result<Value, _> = if call.arguments.trim().is_empty() {
                        Ok(Value::Object(Default::default()))
                    } else {
                        serde_json::from_str(&call.arguments)
                    };
                    let response = match parsed {
                        Ok(args) if args.is_object() => env.call(&call.name, &args),
                        _ => ToolResponse {
                            status: ToolStatus::Error,
                            content: "error: malformed tool-call arguments".to_string(),
                        },
                    };
                    let (tokens_in, tokens_out) = if i == 0 {
                        (reply.usage.tokens_in, reply.usage.tokens_out)
                    } else {
                        (0, 0)
                    };
                    session.step(ToolCallStep {
                        turn: 0,
                        tool_name: call.name.clone(),
                        arguments: call.arguments.clone(),
                        result: response.content.clone(),
                        status: response.status,
                        tokens_in,
                        tokens_out,
                    })?;
                    conversation.push(ChatMessage::ToolCall {
                        id: call.id.clone(),
                        name: call.name.clone(),
                        arguments: call.arguments.clone(),
                    });
                    results.push(ChatMessage::ToolResult {
                        id: call.id.clone(),
                        name: call.name.clone(),
                        content: response.content,
                        status: response.status,
                    });
                }
                conversation.extend(results);
            }
        }
    }
}

/// Runs `driver` on `task` under the feasibility prompt and records the
/// trace as `<task_id>::<agent_id>`.
pub fn drive_single_agent(
    driver: &mut dyn AgentDriver,
    agent_id: &str,
    task: &Task,
    config: &RunConfig,
    env: &dyn Environment,
    recorder: &TraceRecorder,
) -> Result<ExecutionTrace, RunError> {
    config.validate()?;
    let mut session = Session::open(recorder, task, agent_id)?;
    let conversation = vec![
        ChatMessage::System(config.feasibility_prompt.clone()),
        ChatMessage::User(task.query.clone()),
    ];
    let end = act_loop(
        &mut session,
        driver,
        conversation,
        config.max_turns,
        "assistant",
        task,
        config,
        env,
    )?;
    session.finish(end)
}

pub fn run_single_agent(
    agent: &AgentSpec,
    task: &Task,
    config: &RunConfig,
    env: &dyn Environment,
    recorder: &TraceRecorder,
) -> Result<ExecutionTrace, RunError> {
    let mut driver = agent.driver(task, Role::Actor)?;
    drive_single_agent(driver.as_mut(), &agent.agent_id, task, config, env, recorder)
}

/// Planner–executor protocol. Each round the planner either declares
/// `STOP` or plans; a fresh executor then gets up to `max_executor_turns`.
/// Unless the executor succeeded or stopped, the planner reviews its
/// report in the next round. All turns land in one trace.
#[allow(clippy::too_many_arguments)]
pub fn drive_planner_executor(
    planner: &mut dyn AgentDriver,
    executor_factory: &mut dyn FnMut() -> Result<Box<dyn AgentDriver>, AgentError>,
    agent_id: &str,
    task: &Task,
    config: &RunConfig,
    env: &dyn Environment,
    recorder: &TraceRecorder,
) -> Result<ExecutionTrace, RunError> {
    config.validate()?;
    let mut session = Session::open(recorder, task, agent_id)?;
    let mut planner_conv = vec![
        ChatMessage::System(PLANNER_PROMPT.to_string()),
        ChatMessage::User(format!(
            "Task: {}\n\nAvailable tools:\n{}",
            task.query,
            render_tools(env.tools())
        )),
    ];

    for round in 1..=config.planner_rounds {
        let reply = match planner.respond(&planner_conv, env.tools()) {
            Ok(r) => r,
            Err(e) => {
                let end = recoverable(e)?;
                return session.finish(end);
            }
        };
        let text = match reply.action {
            Action::Message(t) => t,
            // planners have no tools; a call request is treated as its text
            Action::ToolCalls(calls) => calls
                .iter()
                .map(|c| format!("{}({})", c.name, c.arguments))
                .collect::<Vec<_>>()
                .join("\n"),
        };
        session.message("planner", &text, reply.usage.tokens_in, reply.usage.tokens_out)?;
        if let Some(sig) = detect_stop(&text, &config.stop_patterns) {
            return session.finish(LoopEnd::Stopped(sig));
        }
        planner_conv.push(ChatMessage::Assistant(text.clone()));

        let mut executor = match executor_factory() {
            Ok(e) => e,
            Err(e) => {
                let end = recoverable(e)?;
                return session.finish(end);
            }
        };
        let executor_conv = vec![
            ChatMessage::System(config.feasibility_prompt.clone()),
            ChatMessage::User(format!("{}\n\nPlan from the planner:\n{}", task.query, text)),
        ];
        let first_step = session.steps.len();
        let end = act_loop(
            &mut session,
            executor.as_mut(),
            executor_conv,
            config.max_executor_turns,
            "executor",
            task,
            config,
            env,
        )?;
        let (outcome, final_message) = match end {
            LoopEnd::Stopped(_) | LoopEnd::Answer { success: true, .. } | LoopEnd::Error(_) => {
                return session.finish(end)
            }
            _ if round == config.planner_rounds => return session.finish(end),
            LoopEnd::Answer { text, .. } => (Outcome::Failure, Some(text)),
            LoopEnd::Cap => (Outcome::TurnCapExceeded, None),
        };
        let pass = &session.steps[first_step..];
        let mut missing: Vec<String> = Vec::new();
        for s in pass.iter().filter(|s| s.status == ToolStatus::NotFound) {
            if !missing.contains(&s.tool_name) {
                missing.push(s.tool_name.clone());
            }
        }
        let report = ExecutorReport {
            round,
            outcome,
            missing_tools: missing,
            tool_calls: pass.len(),
            final_message,
        };
        planner_conv.push(ChatMessage::User(format!(
            "{REPORT_PREFIX} {}",
            serde_json::to_string(&report).expect("report serializes")
        )));
    }
    unreachable!("the final round always finishes the trace")
}

pub fn run_planner_executor(
    planner: &AgentSpec,
    executor: &AgentSpec,
    task: &Task,
    config: &RunConfig,
    env: &dyn Environment,
    recorder: &TraceRecorder,
) -> Result<ExecutionTrace, RunError> {
    let mut planner_driver = planner.driver(task, Role::Planner)?;
    let mut factory = || executor.driver(task, Role::Actor);
    let agent_id = format!("{}->{}", planner.agent_id, executor.agent_id);
    drive_planner_executor(
        planner_driver.as_mut(),
        &mut factory,
        &agent_id,
        task,
        config,
        env,
        recorder,
    )
}

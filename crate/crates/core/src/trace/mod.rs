//! Execution traces: ordered tool calls and assistant messages with exact
//! token accounting, recorded append-only as JSON lines.

mod store;

use serde::{Deserialize, Serialize};

use crate::Feasibility;

pub use store::{
    canonicalize_trace_file, read_trace_dir, read_trace_file, read_trace_str, RecordKind,
    TraceContents, TraceRecord, TraceRecorder,
};

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace `{0}` is already finalized")]
    Finalized(String),
    #[error("trace `{0}` is not open")]
    NotOpen(String),
    #[error("trace `{0}` is already open")]
    AlreadyOpen(String),
    #[error("trace `{trace_id}`: expected turn {expected}, got {got}")]
    NonMonotoneTurn {
        trace_id: String,
        expected: u32,
        got: u32,
    },
    #[error("trace `{trace_id}`: inconsistent finalization: {message}")]
    Inconsistent { trace_id: String, message: String },
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt trace file {path} line {line}: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
    Stopped,
    TurnCapExceeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    NotFound,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallStep {
    pub turn: u32,
    pub tool_name: String,
    /// Serialized argument map.
    pub arguments: String,
    pub result: String,
    pub status: ToolStatus,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageTurn {
    pub turn: u32,
    pub role: String,
    pub text: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Turn {
    ToolCall(ToolCallStep),
    Message(MessageTurn),
}

impl Turn {
    pub fn turn(&self) -> u32 {
        match self {
            Turn::ToolCall(s) => s.turn,
            Turn::Message(m) => m.turn,
        }
    }

    pub fn tokens(&self) -> u64 {
        match self {
            Turn::ToolCall(s) => s.tokens_in + s.tokens_out,
            Turn::Message(m) => m.tokens_in + m.tokens_out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionTrace {
    pub trace_id: String,
    pub task_id: String,
    pub agent_id: String,
    pub steps: Vec<ToolCallStep>,
    pub messages: Vec<MessageTurn>,
    pub outcome: Outcome,
    pub decision: Feasibility,
    pub stop_reason: Option<String>,
    /// Set when the run ended on an error (transport, malformed payload).
    pub error: Option<String>,
}

impl ExecutionTrace {
    /// Steps and messages merged by turn index.
    pub fn turns(&self) -> Vec<Turn> {
        let mut out: Vec<Turn> = self
            .steps
            .iter()
            .cloned()
            .map(Turn::ToolCall)
            .chain(self.messages.iter().cloned().map(Turn::Message))
            .collect();
        out.sort_by_key(Turn::turn);
        out
    }

    pub fn turn_count(&self) -> usize {
        self.steps.len() + self.messages.len()
    }

    /// Final assistant text, if the trace ended on a message.
    pub fn final_message(&self) -> Option<&MessageTurn> {
        let last_msg = self.messages.last()?;
        match self.steps.last() {
            Some(s) if s.turn > last_msg.turn => None,
            _ => Some(last_msg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenCost {
    pub total: u64,
}

/// All input and output tokens up to and including the termination turn.
pub fn total_tokens(trace: &ExecutionTrace) -> TokenCost {
    let steps: u64 = trace.steps.iter().map(|s| s.tokens_in + s.tokens_out).sum();
    let msgs: u64 = trace.messages.iter().map(|m| m.tokens_in + m.tokens_out).sum();
    TokenCost { total: steps + msgs }
}

pub(crate) fn check_finalization(
    trace_id: &str,
    outcome: Outcome,
    decision: Feasibility,
    stop_reason: Option<&str>,
) -> Result<(), TraceError> {
    let stopped = outcome == Outcome::Stopped;
    let infeasible = decision == Feasibility::Infeasible;
    let message = if stopped != infeasible {
        Some(format!("outcome {outcome:?} with decision {decision}"))
    } else if stop_reason.is_some() != infeasible {
        Some(match stop_reason {
            Some(_) => "stop_reason given for a feasible decision".to_string(),
            None => "infeasible decision without stop_reason".to_string(),
        })
    } else {
        None
    };
    match message {
        Some(message) => Err(TraceError::Inconsistent {
            trace_id: trace_id.to_string(),
            message,
        }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(turn: u32, name: &str, tin: u64, tout: u64) -> ToolCallStep {
        ToolCallStep {
            turn,
            tool_name: name.into(),
            arguments: "{}".into(),
            result: "ok".into(),
            status: ToolStatus::Ok,
            tokens_in: tin,
            tokens_out: tout,
        }
    }

    fn msg(turn: u32, tin: u64, tout: u64) -> MessageTurn {
        MessageTurn {
            turn,
            role: "assistant".into(),
            text: "done".into(),
            tokens_in: tin,
            tokens_out: tout,
        }
    }

    fn trace(steps: Vec<ToolCallStep>, messages: Vec<MessageTurn>) -> ExecutionTrace {
        ExecutionTrace {
            trace_id: "t".into(),
            task_id: "t".into(),
            agent_id: "a".into(),
            steps,
            messages,
            outcome: Outcome::Success,
            decision: Feasibility::Feasible,
            stop_reason: None,
            error: None,
        }
    }

    #[test]
    fn decision_on_first_message() {
        assert_eq!(total_tokens(&trace(vec![], vec![msg(1, 50, 10)])).total, 60);
    }

    #[test]
    fn two_steps_and_a_message() {
        let t = trace(
            vec![step(1, "a", 100, 20), step(2, "b", 200, 30)],
            vec![msg(3, 40, 5)],
        );
        assert_eq!(total_tokens(&t).total, 395);
        assert_eq!(t.final_message().unwrap().turn, 3);
        assert_eq!(t.turns().iter().map(Turn::turn).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn finalization_rules() {
        use Feasibility::*;
        assert!(check_finalization("x", Outcome::Stopped, Infeasible, Some("missing payment tool")).is_ok());
        assert!(check_finalization("x", Outcome::Stopped, Feasible, None).is_err());
        assert!(check_finalization("x", Outcome::Success, Feasible, None).is_ok());
        assert!(check_finalization("x", Outcome::Success, Feasible, Some("why")).is_err());
        assert!(check_finalization("x", Outcome::Stopped, Infeasible, None).is_err());
        assert!(check_finalization("x", Outcome::Failure, Infeasible, Some("r")).is_err());
    }
}

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    check_finalization, total_tokens, ExecutionTrace, MessageTurn, Outcome, ToolCallStep,
    ToolStatus, TraceError, Turn,
};
use crate::Feasibility;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    ToolCall,
    Message,
    Final,
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub trace_id: String,
    pub task_id: String,
    pub agent_id: String,
    pub turn: u32,
    pub kind: RecordKind,
    pub payload: Value,
    pub tokens_in: u64,
    pub tokens_out: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Feasibility>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_tokens: Option<u64>,
}

#[derive(Debug)]
struct OpenTrace {
    task_id: String,
    agent_id: String,
    steps: Vec<ToolCallStep>,
    messages: Vec<MessageTurn>,
    last_turn: u32,
}

#[derive(Debug, Default)]
struct Registry {
    open: HashMap<String, OpenTrace>,
    finalized: HashMap<String, ()>,
}

/// Records traces, optionally mirroring every record to a JSON-lines file.
///
/// Each trace must be driven by one caller at a time; distinct traces can
/// be recorded concurrently through a shared reference.
#[derive(Debug)]
pub struct TraceRecorder {
    registry: Mutex<Registry>,
    sink: Option<Mutex<BufWriter<File>>>,
    path: Option<PathBuf>,
}

impl TraceRecorder {
    pub fn in_memory() -> Self {
        Self {
            registry: Mutex::default(),
            sink: None,
            path: None,
        }
    }

    /// Appends to `path`, creating it if needed.
    pub fn append_to(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            registry: Mutex::default(),
            sink: Some(Mutex::new(BufWriter::new(file))),
            path: Some(path),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn write(&self, record: &TraceRecord) -> Result<(), TraceError> {
        if let Some(sink) = &self.sink {
            let mut line = serde_json::to_string(record).expect("trace record serializes");
            line.push('\n');
            let mut w = sink.lock().expect("trace sink poisoned");
            w.write_all(line.as_bytes())?;
            w.flush()?;
        }
        Ok(())
    }

    pub fn open(
        &self,
        trace_id: &str,
        task_id: &str,
        agent_id: &str,
    ) -> Result<(), TraceError> {
        let mut reg = self.registry.lock().expect("registry poisoned");
        if reg.finalized.contains_key(trace_id) {
            return Err(TraceError::Finalized(trace_id.to_string()));
        }
        if reg.open.contains_key(trace_id) {
            return Err(TraceError::AlreadyOpen(trace_id.to_string()));
        }
        reg.open.insert(
            trace_id.to_string(),
            OpenTrace {
                task_id: task_id.to_string(),
                agent_id: agent_id.to_string(),
                steps: Vec::new(),
                messages: Vec::new(),
                last_turn: 0,
            },
        );
        Ok(())
    }

    pub fn last_turn(&self, trace_id: &str) -> Option<u32> {
        let reg = self.registry.lock().expect("registry poisoned");
        reg.open.get(trace_id).map(|t| t.last_turn)
    }

    pub fn append(&self, trace_id: &str, turn: Turn) -> Result<(), TraceError> {
        let mut reg = self.registry.lock().expect("registry poisoned");
        if reg.finalized.contains_key(trace_id) {
            return Err(TraceError::Finalized(trace_id.to_string()));
        }
        let open = reg
            .open
            .get_mut(trace_id)
            .ok_or_else(|| TraceError::NotOpen(trace_id.to_string()))?;
        let expected = open.last_turn + 1;
        if turn.turn() != expected {
            return Err(TraceError::NonMonotoneTurn {
                trace_id: trace_id.to_string(),
                expected,
                got: turn.turn(),
            });
        }
        let record = match &turn {
            Turn::ToolCall(s) => TraceRecord {
                trace_id: trace_id.to_string(),
                task_id: open.task_id.clone(),
                agent_id: open.agent_id.clone(),
                turn: s.turn,
                kind: RecordKind::ToolCall,
                payload: json!({
                    "tool_name": s.tool_name,
                    "arguments": s.arguments,
                    "result": s.result,
                    "status": s.status,
                }),
                tokens_in: s.tokens_in,
                tokens_out: s.tokens_out,
                outcome: None,
                decision: None,
                stop_reason: None,
                total_tokens: None,
            },
            Turn::Message(m) => TraceRecord {
                trace_id: trace_id.to_string(),
                task_id: open.task_id.clone(),
                agent_id: open.agent_id.clone(),
                turn: m.turn,
                kind: RecordKind::Message,
                payload: json!({ "role": m.role, "text": m.text }),
                tokens_in: m.tokens_in,
                tokens_out: m.tokens_out,
                outcome: None,
                decision: None,
                stop_reason: None,
                total_tokens: None,
            },
        };
        self.write(&record)?;
        open.last_turn = expected;
        match turn {
            Turn::ToolCall(s) => open.steps.push(s),
            Turn::Message(m) => open.messages.push(m),
        }
        Ok(())
    }

    pub fn finalize(
        &self,
        trace_id: &str,
        outcome: Outcome,
        decision: Feasibility,
        stop_reason: Option<String>,
        error: Option<String>,
    ) -> Result<ExecutionTrace, TraceError> {
        let mut reg = self.registry.lock().expect("registry poisoned");
        if reg.finalized.contains_key(trace_id) {
            return Err(TraceError::Finalized(trace_id.to_string()));
        }
        check_finalization(trace_id, outcome, decision, stop_reason.as_deref())?;
        let open = reg
            .open
            .remove(trace_id)
            .ok_or_else(|| TraceError::NotOpen(trace_id.to_string()))?;
        let trace = ExecutionTrace {
            trace_id: trace_id.to_string(),
            task_id: open.task_id,
            agent_id: open.agent_id,
            steps: open.steps,
            messages: open.messages,
            outcome,
            decision,
            stop_reason,
            error,
        };
        let record = TraceRecord {
            trace_id: trace.trace_id.clone(),
            task_id: trace.task_id.clone(),
            agent_id: trace.agent_id.clone(),
            turn: open.last_turn,
            kind: RecordKind::Final,
            payload: match &trace.error {
                Some(e) => json!({ "error": e }),
                None => json!({}),
            },
            tokens_in: 0,
            tokens_out: 0,
            outcome: Some(outcome),
            decision: Some(decision),
            stop_reason: trace.stop_reason.clone(),
            total_tokens: Some(total_tokens(&trace).total),
        };
        if let Err(e) = self.write(&record) {
            reg.open.insert(
                trace_id.to_string(),
                OpenTrace {
                    task_id: trace.task_id,
                    agent_id: trace.agent_id,
                    steps: trace.steps,
                    messages: trace.messages,
                    last_turn: open.last_turn,
                },
            );
            return Err(e);
        }
        reg.finalized.insert(trace_id.to_string(), ());
        Ok(trace)
    }
}

/// Finalized traces in first-appearance order, plus ids of traces that were
/// started but never finalized (interrupted runs).
#[derive(Debug, Default, Clone, PartialEq)]
pub struct TraceContents {
    pub finalized: Vec<ExecutionTrace>,
    pub incomplete: Vec<String>,
}

struct Partial {
    task_id: String,
    agent_id: String,
    steps: Vec<ToolCallStep>,
    messages: Vec<MessageTurn>,
    last_turn: u32,
}

fn payload_str(p: &Value, key: &str) -> String {
    p.get(key).and_then(Value::as_str).unwrap_or_default().to_string()
}

pub fn read_trace_file(path: impl AsRef<Path>) -> Result<TraceContents, TraceError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    read_trace_str(&text, &path.display().to_string())
}

pub fn read_trace_str(text: &str, origin: &str) -> Result<TraceContents, TraceError> {
    let corrupt = |line: usize, message: String| TraceError::Corrupt {
        path: origin.to_string(),
        line,
        message,
    };
    let mut order: Vec<String> = Vec::new();
    let mut partial: HashMap<String, Partial> = HashMap::new();
    let mut done: HashMap<String, ExecutionTrace> = HashMap::new();

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord =
            serde_json::from_str(line).map_err(|e| corrupt(lineno, e.to_string()))?;
        if done.contains_key(&rec.trace_id) {
            // a later run re-recorded an already finalized trace; first one wins
            continue;
        }
        if !partial.contains_key(&rec.trace_id) {
            order.push(rec.trace_id.clone());
        }
        let entry = partial.entry(rec.trace_id.clone()).or_insert_with(|| Partial {
            task_id: rec.task_id.clone(),
            agent_id: rec.agent_id.clone(),
            steps: Vec::new(),
            messages: Vec::new(),
            last_turn: 0,
        });
        match rec.kind {
            RecordKind::ToolCall | RecordKind::Message => {
                if rec.turn <= entry.last_turn {
                    // an interrupted attempt was restarted
                    entry.steps.clear();
                    entry.messages.clear();
                    entry.last_turn = 0;
                }
                if rec.turn != entry.last_turn + 1 {
                    return Err(corrupt(
                        lineno,
                        format!("turn {} after turn {}", rec.turn, entry.last_turn),
                    ));
                }
                entry.last_turn = rec.turn;
                if rec.kind == RecordKind::ToolCall {
                    let status = rec
                        .payload
                        .get("status")
                        .cloned()
                        .map(serde_json::from_value)
                        .transpose()
                        .map_err(|e| corrupt(lineno, e.to_string()))?
                        .unwrap_or(ToolStatus::Ok);
                    entry.steps.push(ToolCallStep {
                        turn: rec.turn,
                        tool_name: payload_str(&rec.payload, "tool_name"),
                        arguments: payload_str(&rec.payload, "arguments"),
                        result: payload_str(&rec.payload, "result"),
                        status,
                        tokens_in: rec.tokens_in,
                        tokens_out: rec.tokens_out,
                    });
                } else {
                    entry.messages.push(MessageTurn {
                        turn: rec.turn,
                        role: payload_str(&rec.payload, "role"),
                        text: payload_str(&rec.payload, "text"),
                        tokens_in: rec.tokens_in,
                        tokens_out: rec.tokens_out,
                    });
                }
            }
            RecordKind::Final => {
                let p = partial.remove(&rec.trace_id).expect("entry inserted above");
                let (Some(outcome), Some(decision)) = (rec.outcome, rec.decision) else {
                    return Err(corrupt(lineno, "final record without outcome".into()));
                };
                check_finalization(&rec.trace_id, outcome, decision, rec.stop_reason.as_deref())
                    .map_err(|e| corrupt(lineno, e.to_string()))?;
                let trace = ExecutionTrace {
                    trace_id: rec.trace_id.clone(),
                    task_id: p.task_id,
                    agent_id: p.agent_id,
                    steps: p.steps,
                    messages: p.messages,
                    outcome,
                    decision,
                    stop_reason: rec.stop_reason,
                    error: rec.payload.get("error").and_then(Value::as_str).map(str::to_string),
                };
                let recomputed = total_tokens(&trace).total;
                if rec.total_tokens != Some(recomputed) {
                    return Err(corrupt(
                        lineno,
                        format!("total_tokens {:?} != recomputed {recomputed}", rec.total_tokens),
                    ));
                }
                done.insert(rec.trace_id, trace);
            }
        }
    }

    let mut contents = TraceContents::default();
    for id in order {
        if let Some(t) = done.remove(&id) {
            contents.finalized.push(t);
        } else if partial.contains_key(&id) {
            contents.incomplete.push(id);
        }
    }
    Ok(contents)
}

/// Reads every `*.jsonl` file in `dir`, in file-name order. A trace id
/// finalized in an earlier file shadows later copies.
pub fn read_trace_dir(dir: impl AsRef<Path>) -> Result<TraceContents, TraceError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut seen = BTreeMap::new();
    let mut out = TraceContents::default();
    let mut incomplete = Vec::new();
    for f in files {
        let c = read_trace_file(&f)?;
        for t in c.finalized {
            if seen.insert(t.trace_id.clone(), ()).is_none() {
                out.finalized.push(t);
            }
        }
        incomplete.extend(c.incomplete);
    }
    out.incomplete = incomplete.into_iter().filter(|id| !seen.contains_key(id)).collect();
    Ok(out)
}

/// Rewrites a trace file with records grouped per trace and traces ordered
/// by id, so concurrent runs produce identical files. Interrupted traces
/// are dropped; their records carry no finalized information.
pub fn canonicalize_trace_file(path: impl AsRef<Path>) -> Result<(), TraceError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut groups: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    let mut finalized = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(line).map_err(|e| TraceError::Corrupt {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        if finalized.contains_key(&rec.trace_id) {
            continue;
        }
        let g = groups.entry(rec.trace_id.clone()).or_default();
        if rec.kind != RecordKind::Final && rec.turn == 1 {
            g.clear();
        }
        g.push(line);
        if rec.kind == RecordKind::Final {
            finalized.insert(rec.trace_id, ());
        }
    }
    let mut out = String::with_capacity(text.len());
    for (id, lines) in &groups {
        if !finalized.contains_key(id) {
            continue;
        }
        for l in lines {
            out.push_str(l);
            out.push('\n');
        }
    }
    let tmp = path.with_extension("jsonl.tmp");
    std::fs::write(&tmp, out)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

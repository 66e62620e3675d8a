//! Deterministic agents that follow a fixed policy. They stand in for live
//! models in tests and desk-scale reproductions.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Map, Value};

use super::runner::{ExecutorReport, Plan, REPORT_PREFIX};
use super::{
    render_conversation, render_tools, Action, AgentDriver, AgentError, ChatMessage, RefusalStyle,
    Reply, Role, ScriptSource, ScriptedPolicy, ToolCall, Usage,
};
use crate::estimate_tokens;
use crate::task::{ParamType, SyntheticGroundTruth, Task, ToolSpec};
use crate::trace::ToolStatus;

/// Fills every required parameter with a type-correct placeholder.
pub fn placeholder_arguments(tool: &ToolSpec) -> Value {
    let mut args = Map::new();
    for (name, p) in tool.parameters.iter().filter(|(_, p)| p.required) {
        let v = match p.kind {
            ParamType::String => json!(format!("<{name}>")),
            ParamType::Number => json!(1),
            ParamType::Boolean => json!(true),
            ParamType::Enum => json!(p.allowed.first().cloned().unwrap_or_default()),
            ParamType::Object => json!({}),
            ParamType::Array => json!([]),
        };
        args.insert(name.clone(), v);
    }
    Value::Object(args)
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for b in part.iter().chain(std::iter::once(&0xffu8)) {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    // The low bits of raw FNV track byte parity; mix before reducing.
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

fn pick<'a>(group: &'a [String], agent_index: usize, task_id: &str, slot: usize) -> &'a str {
    let h = fnv1a(&[
        &agent_index.to_le_bytes(),
        task_id.as_bytes(),
        &slot.to_le_bytes(),
    ]);
    &group[(h % group.len() as u64) as usize]
}

/// The ordered tool sequence a scripted policy intends to call on `task`.
pub(crate) fn resolve_script(source: &ScriptSource, task: &Task) -> Vec<String> {
    match source {
        ScriptSource::Fixed(names) => names.clone(),
        ScriptSource::FromGroundTruth {
            agent_index,
            roster_size,
            extras,
        } => {
            let Some(gt) = SyntheticGroundTruth::from_task(task) else {
                return Vec::new();
            };
            let required: Vec<String> = gt
                .required
                .iter()
                .enumerate()
                .map(|(i, g)| pick(g, *agent_index, &task.task_id, i).to_string())
                .collect();
            let extra: Vec<String> = gt
                .optional
                .iter()
                .enumerate()
                .filter(|(i, _)| i % roster_size.max(&1) == *agent_index)
                .take(*extras)
                .map(|(i, g)| pick(g, *agent_index, &task.task_id, 1000 + i).to_string())
                .collect();
            let mut script = Vec::with_capacity(required.len() + extra.len());
            let mut req = required.into_iter();
            script.extend(req.next());
            script.extend(extra);
            script.extend(req);
            script
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    policy: ScriptedPolicy,
    role: Role,
    script: Vec<String>,
    cursor: usize,
    retries: BTreeMap<String, u32>,
    started: bool,
    calls: u64,
}

impl ScriptedAgent {
    pub fn new(policy: ScriptedPolicy, task: &Task, role: Role) -> Self {
        let script = resolve_script(&policy.script, task);
        Self {
            policy,
            role,
            script,
            cursor: 0,
            retries: BTreeMap::new(),
            started: false,
            calls: 0,
        }
    }

    pub fn script(&self) -> &[String] {
        &self.script
    }

    fn missing(&self, tools: &[ToolSpec]) -> Vec<String> {
        let offered: BTreeSet<&str> = tools.iter().map(|t| t.name.as_str()).collect();
        let mut seen = BTreeSet::new();
        self.script
            .iter()
            .filter(|t| !offered.contains(t.as_str()) && seen.insert(t.as_str()))
            .cloned()
            .collect()
    }

    fn refusal(&self, missing: &[String]) -> String {
        let list = missing
            .iter()
            .map(|m| format!("`{m}`"))
            .collect::<Vec<_>>()
            .join(", ");
        match self.policy.refusal_style {
            RefusalStyle::SoftRefusal => format!(
                "I'm sorry, but I don't have a tool to {}. The required tool is not available.",
                missing.join(" or ")
            ),
            RefusalStyle::ExplicitStop | RefusalStyle::KeepTrying => {
                format!("STOP: required capability {list} is not available in the tool pool")
            }
        }
    }

    fn reply(&self, action: Action, conversation: &[ChatMessage], tools: &[ToolSpec]) -> Reply {
        let tokens_in = estimate_tokens(&render_conversation(conversation)) + estimate_tokens(&render_tools(tools));
        let out_text = match &action {
            Action::Message(t) => t.clone(),
            Action::ToolCalls(calls) => calls
                .iter()
                .map(|c| format!("call: {} {}", c.name, c.arguments))
                .collect::<Vec<_>>()
                .join("\n"),
        };
        Reply {
            action,
            usage: Usage {
                tokens_in,
                tokens_out: estimate_tokens(&out_text),
                estimated: true,
            },
        }
    }

    fn call(&mut self, name: &str, tools: &[ToolSpec]) -> Action {
        self.calls += 1;
        let arguments = tools
            .iter()
            .find(|t| t.name == name)
            .map(placeholder_arguments)
            .unwrap_or_else(|| json!({}));
        Action::ToolCalls(vec![ToolCall {
            id: format!("call_{}", self.calls),
            name: name.to_string(),
            arguments: arguments.to_string(),
        }])
    }

    fn act(&mut self, conversation: &[ChatMessage], tools: &[ToolSpec]) -> Action {
        if !self.started {
            self.started = true;
            if self.policy.stop_aware {
                let missing = self.missing(tools);
                if !missing.is_empty() {
                    return Action::Message(self.refusal(&missing));
                }
            }
        }
        if let Some(ChatMessage::ToolResult {
            name,
            status: ToolStatus::NotFound,
            ..
        }) = conversation.last()
        {
            match self.policy.refusal_style {
                RefusalStyle::ExplicitStop | RefusalStyle::SoftRefusal => {
                    return Action::Message(self.refusal(std::slice::from_ref(name)));
                }
                RefusalStyle::KeepTrying => {
                    let used = self.retries.entry(name.clone()).or_insert(0);
                    if *used < self.policy.retries_per_missing {
                        *used += 1;
                        let name = name.clone();
                        return self.call(&name, tools);
                    }
                }
            }
        }
        if let Some(next) = self.script.get(self.cursor).cloned() {
            self.cursor += 1;
            return self.call(&next, tools);
        }
        Action::Message(format!(
            "All steps are finished. I used {} and the request has been handled.",
            if self.script.is_empty() {
                "no tools".to_string()
            } else {
                self.script.join(", ")
            }
        ))
    }

    fn plan(&self, conversation: &[ChatMessage], tools: &[ToolSpec]) -> Action {
        let report = conversation.iter().rev().find_map(|m| match m {
            ChatMessage::User(t) => t
                .strip_prefix(REPORT_PREFIX)
                .and_then(|j| serde_json::from_str::<ExecutorReport>(j.trim()).ok()),
            _ => None,
        });
        let missing = match &report {
            None if self.policy.stop_aware => self.missing(tools),
            None => Vec::new(),
            Some(r) => r.missing_tools.clone(),
        };
        let declines = report.is_none() || self.policy.refusal_style != RefusalStyle::KeepTrying;
        if !missing.is_empty() && declines {
            return Action::Message(self.refusal(&missing));
        }
        let plan = Plan {
            required_capabilities: self.script.clone(),
            steps: self
                .script
                .iter()
                .map(|t| format!("call {t}"))
                .chain(std::iter::once("summarise the result".to_string()))
                .collect(),
        };
        Action::Message(plan.to_text())
    }
}

impl AgentDriver for ScriptedAgent {
    fn respond(&mut self, conversation: &[ChatMessage], tools: &[ToolSpec]) -> Result<Reply, AgentError> {
        let action = match self.role {
            Role::Actor => self.act(conversation, tools),
            Role::Planner => self.plan(conversation, tools),
        };
        Ok(self.reply(action, conversation, tools))
    }
}

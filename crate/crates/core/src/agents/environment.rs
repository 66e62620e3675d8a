use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde_json::{json, Value};

use crate::task::{ParamType, SyntheticGroundTruth, Task, ToolSpec};
use crate::trace::{ToolCallStep, ToolStatus};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolResponse {
    pub status: ToolStatus,
    pub content: String,
}

/// The tools an agent can reach for one run, plus the success check.
pub trait Environment: Send + Sync {
    fn tools(&self) -> &[ToolSpec];

    /// Calls outside [`Environment::tools`] must return
    /// [`ToolStatus::NotFound`] without side effects.
    fn call(&self, name: &str, arguments: &Value) -> ToolResponse;

    fn judge(&self, task: &Task, steps: &[ToolCallStep], final_answer: &str) -> bool;
}

/// Decides whether a finished run completed its task.
pub trait SuccessOracle: Send + Sync {
    fn judge(&self, task: &Task, steps: &[ToolCallStep], final_answer: &str) -> bool;
}

/// Default oracle, driven by what the task's ground truth carries:
///
/// * a planted `solution_path`: every required group has a member that was
///   called successfully;
/// * an `answer` string: the final answer contains it;
/// * nothing: any final answer counts.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruthOracle;

impl SuccessOracle for GroundTruthOracle {
    fn judge(&self, task: &Task, steps: &[ToolCallStep], final_answer: &str) -> bool {
        if let Some(gt) = SyntheticGroundTruth::from_task(task) {
            let called: BTreeSet<&str> = steps
                .iter()
                .filter(|s| s.status == ToolStatus::Ok)
                .map(|s| s.tool_name.as_str())
                .collect();
            return gt
                .required
                .iter()
                .all(|group| group.iter().any(|t| called.contains(t.as_str())));
        }
        match task
            .ground_truth
            .as_ref()
            .and_then(|g| g.get("answer"))
            .and_then(Value::as_str)
        {
            Some(answer) => final_answer.contains(answer),
            None => true,
        }
    }
}

type Responder = Arc<dyn Fn(&Value) -> ToolResponse + Send + Sync>;

/// Deterministic stand-in for real tools: validates required arguments and
/// echoes a canned result. Specific tools can be given custom responders.
#[derive(Clone)]
pub struct SimulatedEnvironment {
    tools: Vec<ToolSpec>,
    responders: BTreeMap<String, Responder>,
    oracle: Arc<dyn SuccessOracle>,
}

impl std::fmt::Debug for SimulatedEnvironment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimulatedEnvironment")
            .field("tools", &self.tools.iter().map(|t| &t.name).collect::<Vec<_>>())
            .finish()
    }
}

impl SimulatedEnvironment {
    pub fn new(tools: Vec<ToolSpec>) -> Self {
        Self {
            tools,
            responders: BTreeMap::new(),
            oracle: Arc::new(GroundTruthOracle),
        }
    }

    /// Environment exposing exactly the task's pool.
    pub fn for_task(task: &Task) -> Self {
        Self::new(task.tool_pool.clone())
    }

    pub fn with_oracle(mut self, oracle: Arc<dyn SuccessOracle>) -> Self {
        self.oracle = oracle;
        self
    }

    pub fn with_responder(
        mut self,
        tool: impl Into<String>,
        f: impl Fn(&Value) -> ToolResponse + Send + Sync + 'static,
    ) -> Self {
        self.responders.insert(tool.into(), Arc::new(f));
        self
    }
}

fn type_matches(kind: &ParamType, v: &Value, allowed: &[String]) -> bool {
    match kind {
        ParamType::String => v.is_string(),
        ParamType::Number => v.is_number(),
        ParamType::Boolean => v.is_boolean(),
        ParamType::Object => v.is_object(),
        ParamType::Array => v.is_array(),
        ParamType::Enum => v.as_str().is_some_and(|s| allowed.iter().any(|a| a == s)),
    }
}

impl Environment for SimulatedEnvironment {
    fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    fn call(&self, name: &str, arguments: &Value) -> ToolResponse {
        let Some(tool) = self.tools.iter().find(|t| t.name == name) else {
            return ToolResponse {
                status: ToolStatus::NotFound,
                content: format!("error: tool `{name}` not found"),
            };
        };
        let args = arguments.as_object();
        for (pname, p) in &tool.parameters {
            match args.and_then(|a| a.get(pname)) {
                None if p.required => {
                    return ToolResponse {
                        status: ToolStatus::Error,
                        content: format!("error: missing required argument `{pname}`"),
                    }
                }
                Some(v) if !type_matches(&p.kind, v, &p.allowed) => {
                    return ToolResponse {
                        status: ToolStatus::Error,
                        content: format!("error: argument `{pname}` has the wrong type"),
                    }
                }
                _ => {}
            }
        }
        if let Some(r) = self.responders.get(name) {
            return r(arguments);
        }
        ToolResponse {
            status: ToolStatus::Ok,
            content: json!({ "tool": name, "status": "ok", "arguments": arguments }).to_string(),
        }
    }

    fn judge(&self, task: &Task, steps: &[ToolCallStep], final_answer: &str) -> bool {
        self.oracle.judge(task, steps, final_answer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{sample_task, ParamSpec};

    #[test]
    fn unknown_tool_is_not_found() {
        let env = SimulatedEnvironment::for_task(&sample_task("t", &["a"]));
        assert_eq!(env.call("b", &json!({})).status, ToolStatus::NotFound);
        assert_eq!(env.call("a", &json!({})).status, ToolStatus::Ok);
    }

    #[test]
    fn argument_checks() {
        let tool = ToolSpec::new("pay", "pay")
            .with_param("amount", ParamSpec::new(ParamType::Number, true))
            .with_param(
                "mode",
                ParamSpec {
                    allowed: vec!["card".into()],
                    ..ParamSpec::new(ParamType::Enum, false)
                },
            );
        let env = SimulatedEnvironment::new(vec![tool]);
        assert_eq!(env.call("pay", &json!({})).status, ToolStatus::Error);
        assert_eq!(env.call("pay", &json!({"amount": "x"})).status, ToolStatus::Error);
        assert_eq!(env.call("pay", &json!({"amount": 3, "mode": "cash"})).status, ToolStatus::Error);
        assert_eq!(env.call("pay", &json!({"amount": 3, "mode": "card"})).status, ToolStatus::Ok);
    }

    #[test]
    fn custom_responder() {
        let env = SimulatedEnvironment::for_task(&sample_task("t", &["a"])).with_responder("a", |_| {
            ToolResponse {
                status: ToolStatus::Ok,
                content: "42".into(),
            }
        });
        assert_eq!(env.call("a", &json!({})).content, "42");
    }

    #[test]
    fn answer_oracle() {
        let mut task = sample_task("t", &["a"]);
        task.ground_truth = Some(BTreeMap::from([("answer".to_string(), json!("Paris"))]));
        assert!(GroundTruthOracle.judge(&task, &[], "It is Paris."));
        assert!(!GroundTruthOracle.judge(&task, &[], "It is Rome."));
    }
}

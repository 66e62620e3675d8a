use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::agents::{AgentSpec, RefusalStyle, RunConfig, ScriptSource, ScriptedPolicy, StopPattern};
use crate::critical::RetentionPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Single,
    PlannerExecutor,
}

/// Per-run overrides on top of the per-dataset defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_turns: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner_rounds: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_executor_turns: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasibility_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_patterns: Option<Vec<StopPattern>>,
}

impl RunOverrides {
    pub fn resolve(&self, dataset_id: &str) -> RunConfig {
        let mut c = RunConfig::for_dataset(dataset_id);
        if let Some(v) = self.max_turns {
            c.max_turns = v;
        }
        if let Some(v) = self.planner_rounds {
            c.planner_rounds = v;
        }
        if let Some(v) = self.max_executor_turns {
            c.max_executor_turns = v;
        }
        if let Some(v) = &self.feasibility_prompt {
            c.feasibility_prompt = v.clone();
        }
        if let Some(v) = &self.stop_patterns {
            c.stop_patterns = v.clone();
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSpec {
    pub planner: String,
    pub executor: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// Success is the trace's own outcome.
    #[default]
    TraceOutcome,
    /// Re-judge each trace against the task's ground truth.
    GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvaluateConfig {
    #[serde(default)]
    pub oracle: OracleKind,
}

/// The declarative configuration file. Command-line flags override it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default)]
    pub run: RunOverrides,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<PairSpec>,
    #[serde(default)]
    pub retention: RetentionPolicy,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let config: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut ids = std::collections::BTreeSet::new();
        for a in &self.agents {
            a.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
            if !ids.insert(a.agent_id.as_str()) {
                return Err(PipelineError::Config(format!("duplicate agent id `{}`", a.agent_id)));
            }
        }
        for p in &self.pairs {
            for id in [&p.planner, &p.executor] {
                if !ids.contains(id.as_str()) {
                    return Err(PipelineError::Config(format!("pair names unknown agent `{id}`")));
                }
            }
        }
        self.run
            .resolve("")
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn agent(&self, id: &str) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| a.agent_id == id)
    }
}

/// Scripted agents that follow each synthetic task's planted solution path,
/// `agent-0` … `agent-{n-1}`, each with its own disjoint optional extras.
pub fn synthetic_roster(n: usize, extras: usize, stop_aware: bool, style: RefusalStyle) -> Vec<AgentSpec> {
    (0..n)
        .map(|i| {
            AgentSpec::scripted(
                format!("agent-{i}"),
                ScriptedPolicy::new(
                    ScriptSource::FromGroundTruth {
                        agent_index: i,
                        roster_size: n,
                        extras,
                    },
                    stop_aware,
                    style,
                ),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let text = r#"
seed = 7
jobs = 2
mode = "planner_executor"

[run]
max_turns = 6

[[agents]]
agent_id = "alpha"
kind = "scripted"
stop_aware = false
refusal_style = "keep_trying"
script = { from_ground_truth = { agent_index = 0, roster_size = 1, extras = 1 } }

[[agents]]
agent_id = "remote"
kind = "remote"
endpoint = "http://localhost:8000/v1"
model = "m"

[[pairs]]
planner = "alpha"
executor = "remote"

[retention]
rule = { any_k = 2 }
"#;
        let c = PipelineConfig::parse(text).unwrap();
        assert_eq!(c.mode, RunMode::PlannerExecutor);
        assert_eq!(c.run.resolve("tau-bench").max_turns, 6);
        assert_eq!(c.agents.len(), 2);
        assert_eq!(PipelineConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_pair_members() {
        let text = "[[pairs]]\nplanner = \"x\"\nexecutor = \"y\"\n";
        assert!(matches!(PipelineConfig::parse(text), Err(PipelineError::Config(_))));
    }

    #[test]
    fn dataset_defaults_survive_without_overrides() {
        assert_eq!(RunOverrides::default().resolve("api-bank").max_turns, 12);
    }
}

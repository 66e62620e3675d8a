//! Closed-tool tasks: a user query paired with the fixed pool of tools the
//! agent is allowed to call.

mod format;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use format::{
    load_dataset, load_suite, parse_dataset, parse_suite, write_dataset, write_suite,
    DatasetFormat, SuiteEntry, TaskFile, TaskRecord, SCHEMA_VERSION,
};
pub use synthetic::{generate_synthetic_suite, SyntheticGroundTruth, SyntheticSuite, SyntheticSuiteSpec};

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed task file: {0}")]
    Parse(String),
    #[error("task {task_id}: invalid {field}: {message}")]
    Invalid {
        task_id: String,
        field: String,
        message: String,
    },
    #[error("unknown dataset format `{0}`")]
    UnknownFormat(String),
    #[error("invalid synthetic suite spec: {0}")]
    SyntheticSpec(String),
}

/// Argument types a tool parameter may declare.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Number,
    Boolean,
    Enum,
    Object,
    Array,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    #[serde(rename = "type")]
    pub kind: ParamType,
    #[serde(default)]
    pub required: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    /// Allowed values; only meaningful for [`ParamType::Enum`].
    #[serde(default, rename = "enum", skip_serializing_if = "Vec::is_empty")]
    pub allowed: Vec<String>,
}

impl ParamSpec {
    pub fn new(kind: ParamType, required: bool) -> Self {
        Self {
            kind,
            required,
            description: String::new(),
            allowed: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, ParamSpec>,
}

impl ToolSpec {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            parameters: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, name: impl Into<String>, spec: ParamSpec) -> Self {
        self.parameters.insert(name.into(), spec);
        self
    }
}

/// A query `q` together with its closed candidate tool pool `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub dataset_id: String,
    pub query: String,
    pub tool_pool: Vec<ToolSpec>,
    /// Opaque to everything except the success oracle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<BTreeMap<String, Value>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl Task {
    pub fn tool(&self, name: &str) -> Option<&ToolSpec> {
        self.tool_pool.iter().find(|t| t.name == name)
    }

    pub fn tool_names(&self) -> BTreeSet<String> {
        self.tool_pool.iter().map(|t| t.name.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    EmptyTaskId,
    EmptyQuery,
    EmptyToolName,
    DuplicateToolName,
    EmptyEnum,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Every invariant violation found on a task. Empty means well-formed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub task_id: String,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn into_result(self) -> Result<(), TaskError> {
        match self.findings.into_iter().next() {
            None => Ok(()),
            Some(f) => Err(TaskError::Invalid {
                task_id: self.task_id,
                field: f.field,
                message: f.message,
            }),
        }
    }
}

pub fn validate_task(task: &Task) -> ValidationReport {
    let mut findings = Vec::new();
    let mut push = |kind, field: String, message: String| {
        findings.push(Finding {
            kind,
            field,
            message,
        })
    };

    if task.task_id.trim().is_empty() {
        push(
            FindingKind::EmptyTaskId,
            "task_id".into(),
            "empty task id".into(),
        );
    }
    if task.query.trim().is_empty() {
        push(FindingKind::EmptyQuery, "query".into(), "empty query".into());
    }

    let mut seen = BTreeSet::new();
    for (i, tool) in task.tool_pool.iter().enumerate() {
        if tool.name.trim().is_empty() {
            push(
                FindingKind::EmptyToolName,
                format!("tool_pool[{i}].name"),
                "empty tool name".into(),
            );
        } else if !seen.insert(tool.name.as_str()) {
            push(
                FindingKind::DuplicateToolName,
                format!("tool_pool[{i}].name"),
                format!("duplicate tool name `{}`", tool.name),
            );
        }
        for (pname, p) in &tool.parameters {
            if p.kind == ParamType::Enum && p.allowed.is_empty() {
                push(
                    FindingKind::EmptyEnum,
                    format!("tool_pool[{i}].parameters.{pname}"),
                    format!("enum parameter `{pname}` of `{}` has no allowed values", tool.name),
                );
            }
        }
    }

    ValidationReport {
        task_id: task.task_id.clone(),
        findings,
    }
}

#[cfg(test)]
pub(crate) fn sample_task(id: &str, tools: &[&str]) -> Task {
    Task {
        task_id: id.to_string(),
        dataset_id: "unit".to_string(),
        query: format!("query for {id}"),
        tool_pool: tools
            .iter()
            .map(|n| ToolSpec::new(*n, format!("does {n}")))
            .collect(),
        ground_truth: None,
        metadata: BTreeMap::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_formed_task_has_empty_report() {
        let report = validate_task(&sample_task("t1", &["a", "b", "c"]));
        assert!(report.is_ok(), "{:?}", report.findings);
    }

    #[test]
    fn empty_query_is_one_finding() {
        let mut task = sample_task("t1", &["a"]);
        task.query = "   ".into();
        let report = validate_task(&task);
        assert_eq!(report.findings.len(), 1);
        assert_eq!(report.findings[0].kind, FindingKind::EmptyQuery);
        assert_eq!(report.findings[0].message, "empty query");
    }

    #[test]
    fn duplicate_tool_name_is_one_finding() {
        let task = sample_task("t1", &["search", "search"]);
        let report = validate_task(&task);
        assert_eq!(report.findings.len(), 1);
        assert_eq!(report.findings[0].kind, FindingKind::DuplicateToolName);
    }

    #[test]
    fn enum_without_values_is_flagged() {
        let mut task = sample_task("t1", &["a"]);
        task.tool_pool[0]
            .parameters
            .insert("mode".into(), ParamSpec::new(ParamType::Enum, true));
        let report = validate_task(&task);
        assert_eq!(report.findings[0].kind, FindingKind::EmptyEnum);
    }

    #[test]
    fn validation_is_idempotent() {
        let task = sample_task("", &["x", "x", ""]);
        let first = validate_task(&task);
        let second = validate_task(&task);
        assert_eq!(first, second);
        assert_eq!(first.findings.len(), 3);
    }
}

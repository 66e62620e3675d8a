use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{validate_task, ParamSpec, ParamType, Task, TaskError, ToolSpec};
use crate::Feasibility;

pub const SCHEMA_VERSION: u32 = 1;

/// Canonical on-disk task document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFile {
    pub schema_version: u32,
    pub dataset_id: String,
    pub tasks: Vec<TaskRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    /// Overrides the file-level dataset id; lets pooled suites keep strata.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_id: Option<String>,
    pub query: String,
    pub tool_pool: Vec<ToolSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<BTreeMap<String, Value>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_task_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masked_tools: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasibility_label: Option<Feasibility>,
}

/// A loaded suite member: the task plus its ground-truth feasibility label.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub task: Task,
    pub label: Feasibility,
    pub source_task_id: Option<String>,
    pub masked_tools: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Canonical,
    Bfcl,
    StableToolBench,
    ApiBank,
    TauBench,
}

impl DatasetFormat {
    pub fn id(self) -> &'static str {
        match self {
            DatasetFormat::Canonical => "canonical",
            DatasetFormat::Bfcl => "bfcl",
            DatasetFormat::StableToolBench => "stabletoolbench",
            DatasetFormat::ApiBank => "api-bank",
            DatasetFormat::TauBench => "tau-bench",
        }
    }
}

impl FromStr for DatasetFormat {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "canonical" => DatasetFormat::Canonical,
            "bfcl" => DatasetFormat::Bfcl,
            "stabletoolbench" | "stb" => DatasetFormat::StableToolBench,
            "api-bank" | "apibank" => DatasetFormat::ApiBank,
            "tau-bench" | "taubench" | "tau" => DatasetFormat::TauBench,
            _ => return Err(TaskError::UnknownFormat(s.to_string())),
        })
    }
}

fn read(path: &Path) -> Result<String, TaskError> {
    std::fs::read_to_string(path).map_err(|source| TaskError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Vec<Task>, TaskError> {
    parse_dataset(&read(path.as_ref())?, format)
}

/// Parses and validates a dataset. Order is preserved.
pub fn parse_dataset(text: &str, format: DatasetFormat) -> Result<Vec<Task>, TaskError> {
    let tasks = match format {
        DatasetFormat::Canonical => parse_suite(text)?.into_iter().map(|e| e.task).collect(),
        other => {
            let tasks = adapt(text, other)?;
            check_all(&tasks)?;
            tasks
        }
    };
    Ok(tasks)
}

pub fn load_suite(path: impl AsRef<Path>) -> Result<Vec<SuiteEntry>, TaskError> {
    parse_suite(&read(path.as_ref())?)
}

/// Parses a canonical file, keeping the feasibility metadata that
/// infeasible-suite files carry.
pub fn parse_suite(text: &str) -> Result<Vec<SuiteEntry>, TaskError> {
    let file: TaskFile = serde_json::from_str(text).map_err(|e| TaskError::Parse(e.to_string()))?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(TaskError::Parse(format!(
            "unsupported schema_version {}",
            file.schema_version
        )));
    }
    let entries: Vec<SuiteEntry> = file
        .tasks
        .into_iter()
        .map(|r| {
            let label = r.feasibility_label.unwrap_or(Feasibility::Feasible);
            SuiteEntry {
                task: Task {
                    task_id: r.task_id,
                    dataset_id: r.dataset_id.unwrap_or_else(|| file.dataset_id.clone()),
                    query: r.query,
                    tool_pool: r.tool_pool,
                    ground_truth: r.ground_truth,
                    metadata: r.metadata,
                },
                label,
                source_task_id: r.source_task_id,
                masked_tools: r.masked_tools.unwrap_or_default(),
            }
        })
        .collect();

    let tasks: Vec<Task> = entries.iter().map(|e| e.task.clone()).collect();
    check_all(&tasks)?;
    for e in &entries {
        let pool = e.task.tool_names();
        if let Some(t) = e.masked_tools.iter().find(|t| pool.contains(*t)) {
            return Err(TaskError::Invalid {
                task_id: e.task.task_id.clone(),
                field: "masked_tools".into(),
                message: format!("masked tool `{t}` is still in the pool"),
            });
        }
    }
    Ok(entries)
}

fn check_all(tasks: &[Task]) -> Result<(), TaskError> {
    let mut ids = BTreeSet::new();
    for task in tasks {
        validate_task(task).into_result()?;
        if !ids.insert(task.task_id.as_str()) {
            return Err(TaskError::Invalid {
                task_id: task.task_id.clone(),
                field: "task_id".into(),
                message: "duplicate task id in suite".into(),
            });
        }
    }
    Ok(())
}

fn file_dataset_id(entries: &[SuiteEntry]) -> String {
    let ids: BTreeSet<&str> = entries.iter().map(|e| e.task.dataset_id.as_str()).collect();
    match ids.len() {
        1 => ids.into_iter().next().unwrap_or_default().to_string(),
        _ => "mixed".to_string(),
    }
}

/// Serializes entries into a canonical document. Per-task dataset ids are
/// only written when they differ from the file-level one.
pub fn write_suite(entries: &[SuiteEntry]) -> String {
    let dataset_id = file_dataset_id(entries);
    let tasks = entries
        .iter()
        .map(|e| TaskRecord {
            task_id: e.task.task_id.clone(),
            dataset_id: (e.task.dataset_id != dataset_id).then(|| e.task.dataset_id.clone()),
            query: e.task.query.clone(),
            tool_pool: e.task.tool_pool.clone(),
            ground_truth: e.task.ground_truth.clone(),
            metadata: e.task.metadata.clone(),
            source_task_id: e.source_task_id.clone(),
            masked_tools: (e.label == Feasibility::Infeasible).then(|| e.masked_tools.clone()),
            feasibility_label: (e.label == Feasibility::Infeasible).then_some(Feasibility::Infeasible),
        })
        .collect();
    let file = TaskFile {
        schema_version: SCHEMA_VERSION,
        dataset_id,
        tasks,
    };
    let mut out = serde_json::to_string_pretty(&file).expect("task file serializes");
    out.push('\n');
    out
}

pub fn write_dataset(tasks: &[Task]) -> String {
    let entries: Vec<SuiteEntry> = tasks
        .iter()
        .map(|t| SuiteEntry {
            task: t.clone(),
            label: Feasibility::Feasible,
            source_task_id: None,
            masked_tools: BTreeSet::new(),
        })
        .collect();
    write_suite(&entries)
}

// ---- source-benchmark adapters ----

fn source_records(text: &str) -> Result<Vec<Value>, TaskError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        serde_json::from_str(trimmed).map_err(|e| TaskError::Parse(e.to_string()))
    } else {
        // JSON lines, or any stream of concatenated documents
        serde_json::Deserializer::from_str(trimmed)
            .into_iter::<Value>()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| TaskError::Parse(format!("record {}: {e}", i + 1))))
            .collect()
    }
}

fn str_field<'a>(v: &'a Value, keys: &[&str]) -> Option<&'a str> {
    keys.iter().find_map(|k| v.get(*k).and_then(Value::as_str))
}

fn required_str(v: &Value, keys: &[&str], idx: usize) -> Result<String, TaskError> {
    str_field(v, keys).map(str::to_string).ok_or_else(|| TaskError::Invalid {
        task_id: format!("#{idx}"),
        field: keys[0].to_string(),
        message: "missing string field".into(),
    })
}

fn json_schema_type(raw: Option<&str>) -> ParamType {
    match raw.unwrap_or("string").to_ascii_lowercase().as_str() {
        "integer" | "int" | "number" | "float" | "double" => ParamType::Number,
        "boolean" | "bool" => ParamType::Boolean,
        "object" | "dict" => ParamType::Object,
        "array" | "list" | "tuple" => ParamType::Array,
        _ => ParamType::String,
    }
}

fn param_from_schema(schema: &Value, required: bool) -> ParamSpec {
    let allowed: Vec<String> = schema
        .get("enum")
        .and_then(Value::as_array)
        .map(|vs| {
            vs.iter()
                .map(|v| v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string()))
                .collect()
        })
        .unwrap_or_default();
    ParamSpec {
        kind: if allowed.is_empty() {
            json_schema_type(schema.get("type").and_then(Value::as_str))
        } else {
            ParamType::Enum
        },
        required,
        description: str_field(schema, &["description"]).unwrap_or_default().to_string(),
        allowed,
    }
}

/// `{"type":"object","properties":{..},"required":[..]}` → parameter map.
fn params_from_object_schema(schema: Option<&Value>) -> BTreeMap<String, ParamSpec> {
    let Some(schema) = schema else {
        return BTreeMap::new();
    };
    let required: BTreeSet<&str> = schema
        .get("required")
        .and_then(Value::as_array)
        .map(|r| r.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default();
    schema
        .get("properties")
        .and_then(Value::as_object)
        .map(|props| {
            props
                .iter()
                .map(|(name, p)| (name.clone(), param_from_schema(p, required.contains(name.as_str()))))
                .collect()
        })
        .unwrap_or_default()
}

fn openai_style_tool(v: &Value) -> Option<ToolSpec> {
    let f = v.get("function").unwrap_or(v);
    Some(ToolSpec {
        name: str_field(f, &["name"])?.to_string(),
        description: str_field(f, &["description"]).unwrap_or_default().to_string(),
        parameters: params_from_object_schema(f.get("parameters")),
    })
}

fn tools_from(v: &Value, key: &str, conv: impl Fn(&Value) -> Option<ToolSpec>) -> Vec<ToolSpec> {
    v.get(key)
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(conv).collect())
        .unwrap_or_default()
}

fn bfcl_query(v: &Value) -> Option<String> {
    match v.get("question")? {
        Value::String(s) => Some(s.clone()),
        // [[{"role":"user","content":...}, ...], ...]
        Value::Array(turns) => {
            let joined: Vec<String> = turns
                .iter()
                .flat_map(|t| t.as_array().cloned().unwrap_or_else(|| vec![t.clone()]))
                .filter(|m| m.get("role").and_then(Value::as_str) == Some("user"))
                .filter_map(|m| m.get("content").and_then(Value::as_str).map(str::to_string))
                .collect();
            Some(joined.join("\n"))
        }
        _ => None,
    }
}

fn stb_tool(api: &Value) -> Option<ToolSpec> {
    let api_name = str_field(api, &["api_name"])?;
    let tool_name = str_field(api, &["tool_name"]).unwrap_or("tool");
    let norm = |s: &str| -> String {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
            .collect()
    };
    let mut parameters = BTreeMap::new();
    for (key, required) in [("required_parameters", true), ("optional_parameters", false)] {
        for p in api.get(key).and_then(Value::as_array).into_iter().flatten() {
            if let Some(name) = str_field(p, &["name"]) {
                parameters.insert(name.to_string(), param_from_schema(p, required));
            }
        }
    }
    Some(ToolSpec {
        name: format!("{}_for_{}", norm(api_name), norm(tool_name)),
        description: str_field(api, &["api_description", "description"])
            .unwrap_or_default()
            .to_string(),
        parameters,
    })
}

fn api_bank_tool(api: &Value) -> Option<ToolSpec> {
    let parameters = api
        .get("input_parameters")
        .and_then(Value::as_object)
        .map(|m| {
            m.iter()
                .map(|(k, p)| {
                    let required = p.get("required").and_then(Value::as_bool).unwrap_or(true);
                    (k.clone(), param_from_schema(p, required))
                })
                .collect()
        })
        .unwrap_or_default();
    Some(ToolSpec {
        name: str_field(api, &["name", "api_name"])?.to_string(),
        description: str_field(api, &["description"]).unwrap_or_default().to_string(),
        parameters,
    })
}

fn adapt(text: &str, format: DatasetFormat) -> Result<Vec<Task>, TaskError> {
    let dataset_id = format.id().to_string();
    source_records(text)?
        .iter()
        .enumerate()
        .map(|(idx, v)| {
            let (task_id, query, tool_pool, gt_key) = match format {
                DatasetFormat::Bfcl => (
                    required_str(v, &["id"], idx)?,
                    bfcl_query(v).unwrap_or_default(),
                    tools_from(v, "function", openai_style_tool),
                    "ground_truth",
                ),
                DatasetFormat::StableToolBench => (
                    v.get("query_id")
                        .map(|q| q.as_str().map(str::to_string).unwrap_or_else(|| q.to_string()))
                        .ok_or_else(|| TaskError::Invalid {
                            task_id: format!("#{idx}"),
                            field: "query_id".into(),
                            message: "missing".into(),
                        })?,
                    required_str(v, &["query"], idx)?,
                    tools_from(v, "api_list", stb_tool),
                    "answer",
                ),
                DatasetFormat::ApiBank => (
                    required_str(v, &["id"], idx)?,
                    required_str(v, &["query", "instruction"], idx)?,
                    tools_from(v, "apis", api_bank_tool),
                    "expected_api_calls",
                ),
                DatasetFormat::TauBench => (
                    required_str(v, &["task_id", "id"], idx)?,
                    required_str(v, &["instruction"], idx)?,
                    tools_from(v, "tools", openai_style_tool),
                    "actions",
                ),
                DatasetFormat::Canonical => unreachable!("canonical files are not adapted"),
            };
            let ground_truth = v
                .get(gt_key)
                .map(|g| BTreeMap::from([(gt_key.to_string(), g.clone())]));
            Ok(Task {
                task_id: format!("{dataset_id}/{task_id}"),
                dataset_id: dataset_id.clone(),
                query,
                tool_pool,
                ground_truth,
                metadata: BTreeMap::from([("source_format".to_string(), dataset_id.clone())]),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::sample_task;

    #[test]
    fn canonical_two_tasks_three_tools() {
        let tasks = vec![sample_task("t1", &["a", "b", "c"]), sample_task("t2", &["d", "e", "f"])];
        let loaded = parse_dataset(&write_dataset(&tasks), DatasetFormat::Canonical).unwrap();
        assert_eq!(loaded.len(), 2);
        assert!(loaded.iter().all(|t| t.tool_pool.len() == 3));
        assert_eq!(loaded, tasks);
    }

    #[test]
    fn duplicate_tool_name_names_the_task() {
        let text = write_dataset(&[sample_task("t1", &["a"]), sample_task("bad", &["x", "x"])]);
        let err = parse_dataset(&text, DatasetFormat::Canonical).unwrap_err();
        match err {
            TaskError::Invalid { task_id, field, .. } => {
                assert_eq!(task_id, "bad");
                assert_eq!(field, "tool_pool[1].name");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_task_ids_rejected() {
        let text = write_dataset(&[sample_task("t1", &["a"]), sample_task("t1", &["b"])]);
        assert!(matches!(
            parse_dataset(&text, DatasetFormat::Canonical),
            Err(TaskError::Invalid { field, .. }) if field == "task_id"
        ));
    }

    #[test]
    fn malformed_and_unknown_format() {
        assert!(matches!(
            parse_dataset("{not json", DatasetFormat::Canonical),
            Err(TaskError::Parse(_))
        ));
        assert!(matches!(
            "toolbench-v9".parse::<DatasetFormat>(),
            Err(TaskError::UnknownFormat(_))
        ));
    }

    #[test]
    fn key_order_is_not_normative() {
        let text = r#"{"tasks":[{"tool_pool":[{"parameters":{},"description":"d","name":"a"}],
            "query":"q","task_id":"t"}],"dataset_id":"x","schema_version":1}"#;
        let tasks = parse_dataset(text, DatasetFormat::Canonical).unwrap();
        assert_eq!(tasks[0].dataset_id, "x");
    }

    #[test]
    fn bfcl_adapter_normalizes_schema() {
        let line = r#"{"id":"simple_1","question":[[{"role":"user","content":"Area of a triangle?"}]],
            "function":[{"name":"calc_area","description":"area","parameters":{"type":"dict",
            "properties":{"base":{"type":"integer"},"unit":{"type":"string","enum":["cm","m"]}},
            "required":["base"]}}]}"#;
        let tasks = parse_dataset(line, DatasetFormat::Bfcl).unwrap();
        let t = &tasks[0];
        assert_eq!(t.task_id, "bfcl/simple_1");
        assert_eq!(t.query, "Area of a triangle?");
        let tool = t.tool("calc_area").unwrap();
        assert_eq!(tool.parameters["base"].kind, ParamType::Number);
        assert!(tool.parameters["base"].required);
        assert_eq!(tool.parameters["unit"].kind, ParamType::Enum);
        assert!(!tool.parameters["unit"].required);
    }

    #[test]
    fn stb_and_tau_adapters() {
        let stb = r#"[{"query_id":42,"query":"find songs","api_list":[{"tool_name":"Deezer",
            "api_name":"Search Track","api_description":"search","required_parameters":
            [{"name":"q","type":"STRING"}],"optional_parameters":[]}]}]"#;
        let t = &parse_dataset(stb, DatasetFormat::StableToolBench).unwrap()[0];
        assert_eq!(t.task_id, "stabletoolbench/42");
        assert_eq!(t.tool_pool[0].name, "search_track_for_deezer");

        let tau = r#"{"task_id":"r1","instruction":"cancel order","tools":[{"type":"function",
            "function":{"name":"cancel_order","description":"c","parameters":{"type":"object",
            "properties":{"order_id":{"type":"string"}},"required":["order_id"]}}}],
            "actions":[{"name":"cancel_order"}]}"#;
        let t = &parse_dataset(tau, DatasetFormat::TauBench).unwrap()[0];
        assert_eq!(t.dataset_id, "tau-bench");
        assert!(t.ground_truth.as_ref().unwrap().contains_key("actions"));
    }

    #[test]
    fn api_bank_adapter() {
        let text = r#"{"id":"7","query":"define apple","apis":[{"name":"Dictionary",
            "description":"lookup","input_parameters":{"keyword":{"type":"str"}}}]}"#;
        let t = &parse_dataset(text, DatasetFormat::ApiBank).unwrap()[0];
        assert_eq!(t.tool_pool[0].name, "Dictionary");
        assert!(t.tool_pool[0].parameters["keyword"].required);
    }

    #[test]
    fn suite_round_trip_keeps_infeasible_fields() {
        let entry = SuiteEntry {
            task: sample_task("t1::infeasible", &["a", "d"]),
            label: Feasibility::Infeasible,
            source_task_id: Some("t1".into()),
            masked_tools: ["b".to_string(), "c".to_string()].into(),
        };
        let text = write_suite(std::slice::from_ref(&entry));
        assert!(text.contains("\"feasibility_label\": \"infeasible\""));
        assert_eq!(parse_suite(&text).unwrap(), vec![entry]);
    }

    #[test]
    fn masked_tool_still_in_pool_is_rejected() {
        let entry = SuiteEntry {
            task: sample_task("v", &["a", "b"]),
            label: Feasibility::Infeasible,
            source_task_id: Some("t".into()),
            masked_tools: ["b".to_string()].into(),
        };
        assert!(parse_suite(&write_suite(&[entry])).is_err());
    }
}
